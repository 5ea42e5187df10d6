"""Problem parameters and the reduction to the driftless unit-volatility case.

A problem instance is a Bachelier price S_t = s0 + mu*t + sigma*W_t traded
over [0, T] at turnover rate phi with quadratic impact cost
(lambda_impact/2) * integral(phi^2), by an exponential-utility investor
(risk aversion alpha) who sees the price path lookahead_delta time units
ahead. Every closed form downstream depends on the shape of the problem only
through the risk-liquidity ratio rho = alpha*sigma^2/lambda_impact, the
horizon and the lookahead window.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

PARAM_FIELDS = ("s0", "mu", "sigma", "lambda_impact", "alpha",
                "horizon_T", "lookahead_delta", "phi0")


@dataclass(frozen=True)
class ModelParams:
    """Full problem specification. Immutable; validated at construction."""

    s0: float = 0.0
    mu: float = 0.0
    sigma: float = 1.0
    lambda_impact: float = 1.0
    alpha: float = 1.0
    horizon_T: float = 1.0
    lookahead_delta: float = 0.0
    phi0: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "lambda_impact", "alpha", "horizon_T"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be > 0, got {value!r}")
        if self.lookahead_delta < 0.0:
            raise ValueError(
                f"lookahead_delta must be >= 0, got {self.lookahead_delta!r}")

    def rho(self) -> float:
        """Risk-liquidity ratio alpha*sigma^2/lambda_impact."""
        return self.alpha * self.sigma ** 2 / self.lambda_impact

    def merton_position(self) -> float:
        """Optimal frictionless position mu/(alpha*sigma^2)."""
        return self.mu / (self.alpha * self.sigma ** 2)

    def reduce(self) -> "ReducedParams":
        """Normalize to the s0=0, sigma=1, mu=0 problem.

        Utilities of the original problem equal exp(-entropy_shift) times
        utilities of the reduced problem started from phi0_r; rho is
        preserved exactly.
        """
        mu_r = self.mu / self.sigma
        return ReducedParams(
            alpha_r=self.alpha * self.sigma,
            lambda_r=self.lambda_impact / self.sigma,
            mu_r=mu_r,
            phi0_r=self.phi0 - self.merton_position(),
            entropy_shift=0.5 * mu_r ** 2 * self.horizon_T,
            sigma=self.sigma,
            s0=self.s0,
            horizon_T=self.horizon_T,
            lookahead_delta=self.lookahead_delta,
            rho_r=self.rho(),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        unknown = set(data) - set(PARAM_FIELDS)
        if unknown:
            raise ValueError(f"unknown parameter fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path: str) -> "ModelParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class ReducedParams:
    """The driftless unit-volatility normalization plus the inverse map.

    sigma, s0, horizon_T and lookahead_delta are carried along so that
    unreduce() can reconstruct the original ModelParams exactly.
    """

    alpha_r: float
    lambda_r: float
    mu_r: float
    phi0_r: float
    entropy_shift: float
    sigma: float
    s0: float
    horizon_T: float
    lookahead_delta: float
    # carried over verbatim so rho is preserved bit-for-bit, not just up to
    # the rounding of alpha_r/lambda_r
    rho_r: float = None

    def __post_init__(self):
        if self.rho_r is None:
            object.__setattr__(self, "rho_r", self.alpha_r / self.lambda_r)

    def rho(self) -> float:
        return self.rho_r

    def unreduce(self) -> ModelParams:
        alpha = self.alpha_r / self.sigma
        sigma2 = self.sigma ** 2
        mu = self.mu_r * self.sigma
        return ModelParams(
            s0=self.s0,
            mu=mu,
            sigma=self.sigma,
            lambda_impact=self.lambda_r * self.sigma,
            alpha=alpha,
            horizon_T=self.horizon_T,
            lookahead_delta=self.lookahead_delta,
            phi0=self.phi0_r + mu / (alpha * sigma2),
        )

    def as_model_params(self) -> ModelParams:
        """The reduced problem as a simulatable instance (S = W, drift 0)."""
        return ModelParams(
            s0=0.0,
            mu=0.0,
            sigma=1.0,
            lambda_impact=self.lambda_r,
            alpha=self.alpha_r,
            horizon_T=self.horizon_T,
            lookahead_delta=self.lookahead_delta,
            phi0=self.phi0_r,
        )


def rho(params: ModelParams) -> float:
    """Risk-liquidity ratio of a parameter set (same arithmetic as params.rho)."""
    return params.rho()


# Parameter set used throughout as the reference configuration.
REFERENCE_PARAMS = ModelParams(
    s0=0.0, mu=0.1, sigma=0.3, lambda_impact=0.01, alpha=0.03,
    horizon_T=10.0, lookahead_delta=1.0, phi0=0.0,
)

"""Closed-form values, certainty equivalent, Monte Carlo estimation and the
perturbation-optimality battery.

Closed forms (all integrals by adaptive quadrature, split at the s = delta
kink):

* primal value  -exp(alpha*lam*sqrt(rho)*tanh(sqrt(rho)T)/2*(phi0 - m)^2
                     - mu^2*T/(2 sigma^2) - premium/2)
* certainty equivalent  premium/(2*alpha), independent of mu and phi0
* dual value (reduced coordinates)
                -lam_r*phi0_r^2*sqrt(rho)*tanh(sqrt(rho)T)/2
                     + premium/(2*alpha_r)

with premium = int_0^T (s^delta)*rho/(1 + (s^delta)*sqrt(rho)
tanh(sqrt(rho)(T-s))) ds. The duality identity ties them together:
-(1/alpha)*log(-primal) equals the reduced dual value mapped back through
sigma and the drift entropy shift.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import market_sim, policy
from .numerics import quad
from .params import ModelParams

EXP_CLAMP = 700.0


def lookahead_premium_integral(rho: float, horizon: float,
                               delta: float) -> float:
    """int_0^T (s^delta)*rho / (1 + (s^delta)*sqrt(rho)*tanh(sqrt(rho)(T-s))) ds."""
    if delta == 0.0:
        return 0.0
    sr = math.sqrt(rho)

    def integrand(s: float) -> float:
        c = min(s, delta)
        return rho * c / (1.0 + c * sr * math.tanh(sr * (horizon - s)))

    return quad(integrand, 0.0, horizon, breakpoints=[delta])


def primal_value(params: ModelParams) -> float:
    """Maximal expected exponential utility, always < 0."""
    sr = math.sqrt(params.rho())
    gap = params.phi0 - params.merton_position()
    exponent = (params.alpha * params.lambda_impact * sr
                * math.tanh(sr * params.horizon_T) / 2.0 * gap * gap
                - 0.5 * params.mu ** 2 * params.horizon_T / params.sigma ** 2
                - 0.5 * lookahead_premium_integral(
                    params.rho(), params.horizon_T, params.lookahead_delta))
    if exponent > EXP_CLAMP:
        return -math.inf
    return -math.exp(exponent)


def certainty_equivalent(params: ModelParams) -> float:
    """Cash value of the lookahead window; zero when delta = 0."""
    return lookahead_premium_integral(
        params.rho(), params.horizon_T, params.lookahead_delta) \
        / (2.0 * params.alpha)


def dual_value(params: ModelParams) -> float:
    """Value of the entropy-penalized dual problem in reduced coordinates."""
    red = params.reduce()
    sr = math.sqrt(red.rho())
    unwind = -red.lambda_r * red.phi0_r ** 2 * sr \
        * math.tanh(sr * params.horizon_T) / 2.0
    premium = lookahead_premium_integral(red.rho(), params.horizon_T,
                                         params.lookahead_delta)
    return unwind + premium / (2.0 * red.alpha_r)


def dual_value_mapped(params: ModelParams) -> float:
    """Dual value mapped back to original coordinates.

    Equals -(1/alpha)*log(-primal_value(params)) exactly.
    """
    red = params.reduce()
    return params.sigma * dual_value(params) + red.entropy_shift / params.alpha


def duality_gap(params: ModelParams) -> float:
    """-(1/alpha)*log(-primal) minus the mapped dual value (should be ~0)."""
    primal = primal_value(params)
    return -math.log(-primal) / params.alpha - dual_value_mapped(params)


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: int
    n_clamped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def utilities_from_pnl(v: np.ndarray, alpha: float) -> tuple[np.ndarray, int]:
    """-exp(-alpha*v) with the exponent clamped at +-EXP_CLAMP; returns the
    utilities and the number of clamped samples."""
    expo = alpha * v
    clamped = int(np.count_nonzero(np.abs(expo) > EXP_CLAMP))
    return -np.exp(-np.clip(expo, -EXP_CLAMP, EXP_CLAMP)), clamped


def _mc_batch(args) -> tuple[float, float, int, int]:
    params, pol, n_steps, seed, offset, size = args
    ens = market_sim.simulate(params, size, n_steps, seed, path_offset=offset)
    v = policy.rollout_batch(ens.prices, params, pol)
    u, clamped = utilities_from_pnl(v, params.alpha)
    return float(np.sum(u)), float(np.sum(u * u)), len(u), clamped


def mc_expected_utility(pol: str, params: ModelParams, n_paths: int,
                        n_steps: int, seed: int, batch_size: int = 16384,
                        workers: int = 1) -> MCEstimate:
    """Sample mean and standard error of -exp(-alpha*V_T) under a policy.

    Paths are streamed in batches with globally-indexed per-path seeds, so
    the estimate is bit-identical for any batch size or worker count
    (partial sums reduce in batch order).
    """
    jobs = []
    offset = 0
    while offset < n_paths:
        size = min(batch_size, n_paths - offset)
        jobs.append((params, pol, n_steps, seed, offset, size))
        offset += size
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_mc_batch, jobs))
    else:
        results = [_mc_batch(j) for j in jobs]
    total = sum(r[0] for r in results)
    total_sq = sum(r[1] for r in results)
    count = sum(r[2] for r in results)
    clamped = sum(r[3] for r in results)
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / max(count - 1, 1)
    return MCEstimate(mean=mean, std_error=math.sqrt(var / count),
                      n_samples=count, seed=seed, n_clamped=clamped)


def mc_value_extrapolated(params: ModelParams, n_paths: int,
                          n_steps_list: tuple[int, ...], seed: int,
                          workers: int = 1) -> dict:
    """Informed-policy MC utility extrapolated linearly in dt to dt -> 0.

    Each grid level uses an independent seed; the intercept and its standard
    error come from the weighted least-squares fit mean(dt) = a + b*dt.
    """
    estimates = []
    for i, n_steps in enumerate(n_steps_list):
        est = mc_expected_utility("informed", params, n_paths, n_steps,
                                  seed + i, workers=workers)
        estimates.append((n_steps, est))
    dts = np.array([params.horizon_T / n for n, _ in estimates])
    means = np.array([e.mean for _, e in estimates])
    ses = np.array([e.std_error for _, e in estimates])
    x = np.column_stack([np.ones_like(dts), dts])
    w = 1.0 / ses ** 2
    xtwx = x.T @ (w[:, None] * x)
    cov = np.linalg.inv(xtwx)
    coef = cov @ (x.T @ (w * means))
    return {
        "levels": [{"n_steps": n, **e.to_dict()} for n, e in estimates],
        "extrapolated_mean": float(coef[0]),
        "extrapolated_se": float(math.sqrt(cov[0, 0])),
        "slope_vs_dt": float(coef[1]),
    }


# ---------------------------------------------------------------------------
# Perturbation-optimality battery
# ---------------------------------------------------------------------------


def _direction_field(name: str, prices: np.ndarray, rates: np.ndarray,
                     params: ModelParams) -> np.ndarray:
    """Rate perturbation eta (B, N+1), adapted to the lookahead filtration."""
    b, n_plus = prices.shape
    n = n_plus - 1
    dt = params.horizon_T / n
    times = np.linspace(0.0, params.horizon_T, n + 1)
    if name == "constant":
        return np.ones_like(prices)
    if name == "sine":
        return np.tile(np.sin(np.pi * times / params.horizon_T), (b, 1))
    if name == "bump_mid":
        mask = (times >= params.horizon_T / 4) & (times <= params.horizon_T / 2)
        return np.tile(mask.astype(float), (b, 1))
    positions = params.phi0 + np.concatenate(
        [np.zeros((b, 1)), np.cumsum(rates[:, :n], axis=1) * dt], axis=1)
    gap = params.merton_position() - positions
    if name == "merton_gap":
        return gap
    urg = np.array([policy.urgency(t, params) for t in times])
    frontrun = rates - urg[None, :] * gap
    if name == "sign_frontrun":
        return np.sign(frontrun)
    if name == "window_endpoint":
        m = market_sim.lookahead_steps(params, n)
        idx = np.minimum(np.arange(n + 1) + m, n)
        return prices[:, idx] - prices
    raise ValueError(f"unknown perturbation direction {name!r}")


PERTURBATION_DIRECTIONS = ("constant", "sine", "bump_mid", "merton_gap",
                           "sign_frontrun", "window_endpoint")


@dataclass
class PerturbationReport:
    params: ModelParams
    n_paths: int
    n_steps: int
    seed: int
    rate_scale: float
    entries: list = field(default_factory=list)
    pair_entries: list = field(default_factory=list)

    def all_within_3sigma(self) -> bool:
        return all(e["within_3sigma"] for e in self.entries) and \
            all(e["within_3sigma"] for e in self.pair_entries)


def perturbation_test(params: ModelParams, n_paths: int, n_steps: int,
                      seed: int, eps_values: tuple[float, ...] = (0.05, 0.1),
                      directions: tuple[str, ...] = PERTURBATION_DIRECTIONS,
                      batch_size: int = 16384) -> PerturbationReport:
    """First-order optimality check of the informed policy.

    For each direction eta and each epsilon (of both signs, as a fraction of
    the policy's own rate scale), the utility of (optimal + eps*eta) must
    not exceed the optimal utility beyond 3 standard errors of the paired
    difference; the symmetric-pair average must sit below the optimum too
    (concavity). Common random numbers throughout.
    """
    dt = params.horizon_T / n_steps

    # Pilot batch fixes the normalization deterministically.
    pilot = market_sim.simulate(params, min(4096, n_paths), n_steps, seed)
    _, pilot_rates = policy.rollout_batch(pilot.prices, params, "informed",
                                          return_rates=True)
    rate_scale = float(np.sqrt(np.mean(pilot_rates ** 2)))
    eta_scale = {}
    for name in directions:
        eta = _direction_field(name, pilot.prices, pilot_rates, params)
        rms = float(np.sqrt(np.mean(eta ** 2)))
        eta_scale[name] = rate_scale / rms if rms > 0 else 0.0

    signed_eps = sorted({s * e for e in eps_values for s in (+1.0, -1.0)})
    keys = [(name, eps) for name in directions for eps in signed_eps]
    sums = {k: 0.0 for k in keys}
    sums_sq = {k: 0.0 for k in keys}
    pair_keys = [(name, eps) for name in directions for eps in eps_values]
    pair_sums = {k: 0.0 for k in pair_keys}
    pair_sums_sq = {k: 0.0 for k in pair_keys}
    count = 0

    offset = 0
    while offset < n_paths:
        size = min(batch_size, n_paths - offset)
        ens = market_sim.simulate(params, size, n_steps, seed,
                                  path_offset=offset)
        prices = ens.prices
        v_opt, rates = policy.rollout_batch(prices, params, "informed",
                                            return_rates=True)
        u_opt, _ = utilities_from_pnl(v_opt, params.alpha)
        terminal = prices[:, n_steps][:, None]
        for name in directions:
            eta = _direction_field(name, prices, rates, params) \
                * eta_scale[name]
            eta_l = eta[:, :n_steps]
            b1 = np.einsum("ij,ij->i", eta_l,
                           terminal - prices[:, :n_steps]) * dt \
                - params.lambda_impact * np.einsum(
                    "ij,ij->i", rates[:, :n_steps], eta_l) * dt
            b2 = 0.5 * params.lambda_impact \
                * np.einsum("ij,ij->i", eta_l, eta_l) * dt
            u_by_eps = {}
            for eps in signed_eps:
                v_pert = v_opt + eps * b1 - eps * eps * b2
                u_pert, _ = utilities_from_pnl(v_pert, params.alpha)
                diff = u_pert - u_opt
                sums[(name, eps)] += float(np.sum(diff))
                sums_sq[(name, eps)] += float(np.sum(diff * diff))
                u_by_eps[eps] = u_pert
            for eps in eps_values:
                pair = 0.5 * (u_by_eps[eps] + u_by_eps[-eps]) - u_opt
                pair_sums[(name, eps)] += float(np.sum(pair))
                pair_sums_sq[(name, eps)] += float(np.sum(pair * pair))
        count += size
        offset += size

    report = PerturbationReport(params=params, n_paths=count,
                                n_steps=n_steps, seed=seed,
                                rate_scale=rate_scale)
    for (name, eps) in keys:
        mean = sums[(name, eps)] / count
        var = max(sums_sq[(name, eps)] / count - mean * mean, 0.0)
        se = math.sqrt(var / count)
        report.entries.append({
            "direction": name, "eps": eps, "mean_diff": mean,
            "se_diff": se, "within_3sigma": mean <= 3.0 * se,
        })
    for (name, eps) in pair_keys:
        mean = pair_sums[(name, eps)] / count
        var = max(pair_sums_sq[(name, eps)] / count - mean * mean, 0.0)
        se = math.sqrt(var / count)
        report.pair_entries.append({
            "direction": name, "eps": eps, "mean_diff": mean,
            "se_diff": se, "within_3sigma": mean <= 3.0 * se,
        })
    return report


# ---------------------------------------------------------------------------
# Value report
# ---------------------------------------------------------------------------


@dataclass
class ValueReport:
    primal_closed_form: float
    dual_closed_form: float
    certainty_equivalent: float
    mc_estimate: MCEstimate
    mc_gap_in_sigmas: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mc_estimate"] = self.mc_estimate.to_dict()
        return d


def policy_comparison(params: ModelParams, n_paths: int, n_steps: int,
                      seed: int, workers: int = 1) -> list[dict]:
    """Per-policy MC utility means, standard errors and the certainty
    equivalent of each mean (-log(-mean)/alpha), under common random
    numbers (one shared seed)."""
    rows = []
    for pol in policy.POLICIES:
        est = mc_expected_utility(pol, params, n_paths, n_steps, seed,
                                  workers=workers)
        ce = -math.log(-est.mean) / params.alpha if est.mean < 0 else math.nan
        rows.append({"policy": pol, "mean": est.mean,
                     "std_error": est.std_error,
                     "certainty_equivalent": ce})
    return rows


def value_report(params: ModelParams, n_paths: int, n_steps: int,
                 seed: int, workers: int = 1) -> ValueReport:
    primal = primal_value(params)
    est = mc_expected_utility("informed", params, n_paths, n_steps, seed,
                              workers=workers)
    gap = abs(est.mean - primal) / est.std_error if est.std_error > 0 \
        else math.inf
    return ValueReport(
        primal_closed_form=primal,
        dual_closed_form=dual_value_mapped(params),
        certainty_equivalent=certainty_equivalent(params),
        mc_estimate=est,
        mc_gap_in_sigmas=gap,
    )

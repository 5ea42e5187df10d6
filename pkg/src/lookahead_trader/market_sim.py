"""Bachelier path generation, lookahead windows and discretized P&L.

Paths live on a uniform grid t_k = k*dt with dt = T/N; the lookahead window
must be an exact number of grid steps. Each path draws its increments from
its own counter-derived generator (Philox keyed by SeedSequence(seed,
spawn_key=(path_index,))), so ensembles are bit-identical regardless of
batching or worker scheduling.

Both integrals of the trading P&L

    V_T = phi0*(S_T - S_0) + sum_k phi_k*(S_T - S_{t_k})*dt
          - (lambda/2) * sum_k phi_k^2 * dt

use the left-endpoint (Ito-consistent) rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ModelParams


class GridError(ValueError):
    """Lookahead window is not an integer number of grid steps."""


def lookahead_steps(params: ModelParams, n_steps: int) -> int:
    """Number of grid steps M in the lookahead window; Delta must equal M*dt."""
    dt = params.horizon_T / n_steps
    m = params.lookahead_delta / dt
    m_int = round(m)
    if abs(m - m_int) > 1e-9 * max(1.0, m):
        raise GridError(
            f"lookahead_delta={params.lookahead_delta} is not a multiple of "
            f"dt={dt} (N={n_steps})")
    return m_int


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Immutable bundle of simulated price paths on a shared grid."""

    params: ModelParams
    times: np.ndarray          # (N+1,)
    prices: np.ndarray         # (n_paths, N+1)
    seed: int
    path_offset: int = 0       # global index of prices[0]; keeps batching deterministic

    def __post_init__(self):
        self.prices.setflags(write=False)
        self.times.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.prices.shape[1] - 1

    @property
    def dt(self) -> float:
        return self.params.horizon_T / self.n_steps

    def lookahead_window_steps(self) -> int:
        return lookahead_steps(self.params, self.n_steps)

    def lookahead_view(self, path: int, k: int, m: int) -> np.ndarray:
        return lookahead_view(self.prices[path], k, m)


def lookahead_view(path_prices: np.ndarray, k: int, m: int) -> np.ndarray:
    """Price window S_{t_k} .. S_{t_{min(k+m, N)}} as an owned copy.

    The copy carries no data past min(k+m, N): access beyond the window is
    structurally impossible for the consumer.
    """
    n = len(path_prices) - 1
    if not 0 <= k <= n:
        raise IndexError(f"step {k} outside grid of {n} steps")
    end = min(k + m, n)
    window = np.array(path_prices[k:end + 1], dtype=float)
    window.setflags(write=False)
    return window


def _path_generator(seed: int, path_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(path_index,))
    return np.random.Generator(np.random.Philox(ss))


def simulate(params: ModelParams, n_paths: int, n_steps: int, seed: int,
             path_offset: int = 0) -> PathEnsemble:
    """Generate a Bachelier ensemble: increments i.i.d. N(mu*dt, sigma^2*dt)."""
    if n_steps < 1:
        raise GridError("need at least one grid step")
    lookahead_steps(params, n_steps)
    dt = params.horizon_T / n_steps
    loc = params.mu * dt
    scale = params.sigma * np.sqrt(dt)
    prices = np.empty((n_paths, n_steps + 1))
    prices[:, 0] = params.s0
    for i in range(n_paths):
        gen = _path_generator(seed, path_offset + i)
        np.cumsum(gen.normal(loc, scale, size=n_steps), out=prices[i, 1:])
    prices[:, 1:] += params.s0
    times = np.linspace(0.0, params.horizon_T, n_steps + 1)
    return PathEnsemble(params=params, times=times, prices=prices, seed=seed,
                        path_offset=path_offset)


def refine(ensemble: PathEnsemble, level: int = 1) -> PathEnsemble:
    """Brownian-bridge midpoint refinement: N -> 2N steps, same limit path.

    Midpoints are drawn from the bridge law S_mid ~ N((S_l+S_r)/2,
    sigma^2*dt/4) with per-(path, level) derived seeds, so refining twice is
    deterministic and consistent with refining once at double depth.
    """
    p = ensemble.params
    n_old = ensemble.n_steps
    dt_old = ensemble.dt
    prices = np.empty((ensemble.n_paths, 2 * n_old + 1))
    prices[:, 0::2] = ensemble.prices
    half_sd = p.sigma * np.sqrt(dt_old) / 2.0
    for i in range(ensemble.n_paths):
        ss = np.random.SeedSequence(ensemble.seed,
                                    spawn_key=(ensemble.path_offset + i, level))
        gen = np.random.Generator(np.random.Philox(ss))
        mid_mean = 0.5 * (ensemble.prices[i, :-1] + ensemble.prices[i, 1:])
        prices[i, 1::2] = mid_mean + half_sd * gen.standard_normal(n_old)
    times = np.linspace(0.0, p.horizon_T, 2 * n_old + 1)
    return PathEnsemble(params=p, times=times, prices=prices,
                        seed=ensemble.seed, path_offset=ensemble.path_offset)


@dataclass
class StrategyTrace:
    """Per-path record of a policy rollout.

    ``phi`` holds the turnover rate at every grid point (the final entry is
    the rate the policy would quote at T; sums use the left endpoints), and
    ``position`` the holdings, with position[k+1] = position[k] + phi[k]*dt.
    ``window_weight`` is the weight the rate puts on the averaged lookahead
    window, so a trace carries everything needed to plot the price/average/
    weight, rate-split and position panels.
    """

    times: np.ndarray
    prices: np.ndarray
    s_bar: np.ndarray
    phi: np.ndarray
    position: np.ndarray
    frontrun_term: np.ndarray
    merton_term: np.ndarray
    window_weight: np.ndarray = None
    gain_term: float = 0.0
    impact_term: float = 0.0
    v_t: float = 0.0

    CSV_HEADER = "t,S_t,S_bar,phi,Phi,frontrun_term,merton_term,upsilon"

    def __post_init__(self):
        if self.window_weight is None:
            self.window_weight = np.zeros_like(self.times)

    def to_csv_rows(self):
        for k in range(len(self.times)):
            yield (f"{self.times[k]:.10g},{self.prices[k]:.10g},"
                   f"{self.s_bar[k]:.10g},{self.phi[k]:.10g},"
                   f"{self.position[k]:.10g},{self.frontrun_term[k]:.10g},"
                   f"{self.merton_term[k]:.10g},{self.window_weight[k]:.10g}")


def pnl(trace: StrategyTrace, path_prices: np.ndarray,
        params: ModelParams) -> float:
    """Discretized trading P&L of a trace along its path (left-endpoint rule).

    Also fills the trace's gain/impact addends.
    """
    n = len(path_prices) - 1
    if len(trace.phi) - 1 != n:
        raise GridError("trace and path grids differ")
    dt = params.horizon_T / n
    rates = trace.phi[:n]
    s_t = path_prices[n]
    gain = float(params.phi0 * (s_t - path_prices[0])
                 + np.dot(rates, s_t - path_prices[:n]) * dt)
    impact = float(0.5 * params.lambda_impact * np.dot(rates, rates) * dt)
    trace.gain_term = gain
    trace.impact_term = impact
    trace.v_t = gain - impact
    return trace.v_t


def pnl_batch(phi: np.ndarray, prices: np.ndarray,
              params: ModelParams) -> np.ndarray:
    """Vectorized P&L for a (B, N)-rate matrix over a (B, N+1)-price matrix."""
    n = prices.shape[1] - 1
    dt = params.horizon_T / n
    rates = phi[:, :n]
    s_t = prices[:, n][:, None]
    gain = params.phi0 * (prices[:, n] - prices[:, 0]) \
        + np.einsum("ij,ij->i", rates, s_t - prices[:, :n]) * dt
    impact = 0.5 * params.lambda_impact * np.einsum("ij,ij->i", rates, rates) * dt
    return gain - impact

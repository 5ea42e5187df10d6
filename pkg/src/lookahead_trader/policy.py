"""Optimal turnover policies: feedback form, initial-rate closed form,
open-loop operator form, and grid rollouts.

The optimal rate splits into a frontrunning term (chasing the gap between a
weighted average of the visible price window and the current price, scaled
by 1/lambda) and a Merton-tracking term (mean reversion of the position
toward mu/(alpha*sigma^2) at a horizon- and lookahead-dependent urgency).
In the terminal regime T - t <= delta the policy degenerates to chasing
(S_T - S_t)/lambda exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from . import market_sim
from .kernels import KernelSet
from .market_sim import GridError, StrategyTrace, lookahead_steps, pnl
from .numerics import gauss_panel_nodes
from .params import ModelParams, ReducedParams

PolicyName = Literal["informed", "uninformed", "naive_frontrun", "custom"]
POLICIES = ("informed", "uninformed", "naive_frontrun")


@dataclass(frozen=True)
class PolicyInputs:
    """State visible to the policy at one decision time.

    ``price_window`` holds (S_u) for u in [t, (t+delta)^T] on the grid; its
    first sample is the current price.
    """

    t: float
    price_window: np.ndarray
    current_position: float
    current_price: float
    dt: float

    def __post_init__(self):
        if len(self.price_window) == 0:
            raise GridError("empty price window")
        if self.price_window[0] != self.current_price:
            raise GridError("window must start at the current price")


def _padded_window_average(window: np.ndarray, m: int, dt: float) -> float:
    """Trapezoid of the window over m grid steps divided by m*dt.

    Windows truncated at the horizon are extended by their last sample;
    callers only use the result where its weight is zero in that case.
    """
    k = len(window) - 1
    if k >= m:
        integral = np.trapezoid(window[:m + 1], dx=dt)
    else:
        integral = np.trapezoid(window, dx=dt) + (m - k) * dt * window[-1]
    return float(integral) / (m * dt)


def _check_window(inputs: PolicyInputs, kernels: KernelSet, m: int):
    span = (len(inputs.price_window) - 1) * inputs.dt
    full = len(inputs.price_window) == m + 1
    ends_at_horizon = abs(inputs.t + span - kernels.horizon) < 1e-9 * kernels.horizon
    if not (full or ends_at_horizon):
        raise GridError(
            f"window of {len(inputs.price_window)} samples does not cover "
            f"[t, (t+delta)^T] for t={inputs.t}")


def s_bar(inputs: PolicyInputs, kernels: KernelSet) -> float:
    """Weighted price average steering the frontrunning term.

    Convex combination of the endpoint S_{(t+delta)^T} and the window mean,
    with the mean's weight upsilon(T - t); collapses to S_t when delta = 0.
    """
    if kernels.delta == 0.0:
        return inputs.current_price
    m = round(kernels.delta / inputs.dt)
    _check_window(inputs, kernels, m)
    weight = kernels.upsilon(kernels.horizon - inputs.t)
    endpoint = float(inputs.price_window[-1])
    mean = _padded_window_average(inputs.price_window, m, inputs.dt)
    return (1.0 - weight) * endpoint + weight * mean


def urgency(t: float, params: ModelParams) -> float:
    """Mean-reversion speed toward the Merton position at time t.

    sqrt(rho)*tanh(sqrt(rho)(T-t-delta)^+) / (1 + delta*sqrt(rho)*tanh(...));
    the delta = 0 case reduces to sqrt(rho)*tanh(sqrt(rho)(T-t)).
    """
    if not 0.0 <= t <= params.horizon_T * (1.0 + 1e-12):
        raise ValueError(f"t={t!r} outside [0, T]")
    sr = math.sqrt(params.rho())
    th = math.tanh(sr * max(params.horizon_T - t - params.lookahead_delta, 0.0))
    return sr * th / (1.0 + params.lookahead_delta * sr * th)


def feedback_rate_terms(inputs: PolicyInputs,
                        params: ModelParams) -> tuple[float, float]:
    """(frontrunning term, Merton-tracking term) of the optimal rate."""
    kernels = KernelSet.from_params(params)
    avg = s_bar(inputs, kernels)
    frontrun = (avg - inputs.current_price) / params.lambda_impact
    merton = urgency(inputs.t, params) * (
        params.merton_position() - inputs.current_position)
    return frontrun, merton


def feedback_rate(inputs: PolicyInputs, params: ModelParams) -> float:
    frontrun, merton = feedback_rate_terms(inputs, params)
    return frontrun + merton


def initial_rate_closed_form(path_prefix: np.ndarray, params: ModelParams,
                             dt: float) -> float:
    """Optimal rate at t = 0 from the collapsed operator form.

    ``path_prefix`` samples (S_u) for u in [0, delta^T]; its time integral
    uses the trapezoid rule, matching the feedback evaluation exactly.
    """
    sr = math.sqrt(params.rho())
    th = math.tanh(sr * max(params.horizon_T - params.lookahead_delta, 0.0))
    c_avg = sr * th / (1.0 + params.lookahead_delta * sr * th)
    c_end = 1.0 / (1.0 + params.lookahead_delta * sr * th)
    lam = params.lambda_impact
    prefix_integral = float(np.trapezoid(path_prefix, dx=dt)) \
        if len(path_prefix) > 1 else 0.0
    return (c_end * float(path_prefix[-1]) / lam
            + c_avg * prefix_integral / lam
            - float(path_prefix[0]) / lam
            + c_avg * (params.merton_position() - params.phi0))


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

RateFn = Callable[[int, float, np.ndarray, float], float]


def run_policy(path_prices: np.ndarray, params: ModelParams,
               policy: PolicyName | RateFn = "informed") -> StrategyTrace:
    """Forward-Euler rollout of a policy along one path.

    The policy sees the market exclusively through ``market_sim.
    lookahead_view`` windows, so the information constraint is auditable.
    A callable policy receives (step, t, window, position) and returns a
    rate.
    """
    n = len(path_prices) - 1
    m = lookahead_steps(params, n)
    dt = params.horizon_T / n
    kernels = KernelSet.from_params(params)
    sr = math.sqrt(params.rho())
    merton = params.merton_position()
    lam = params.lambda_impact

    times = np.linspace(0.0, params.horizon_T, n + 1)
    phi = np.zeros(n + 1)
    position = np.empty(n + 1)
    position[0] = params.phi0
    sbar_col = np.full(n + 1, np.nan)
    frontrun_col = np.zeros(n + 1)
    merton_col = np.zeros(n + 1)

    for k in range(n + 1):
        t_k = times[k]
        window = market_sim.lookahead_view(path_prices, k, m)
        price = float(window[0])
        pos = position[k]
        if policy == "informed":
            inputs = PolicyInputs(t=t_k, price_window=window,
                                  current_position=pos, current_price=price,
                                  dt=dt)
            avg = s_bar(inputs, kernels)
            frontrun_col[k] = (avg - price) / lam
            merton_col[k] = urgency(t_k, params) * (merton - pos)
            sbar_col[k] = avg
            rate = frontrun_col[k] + merton_col[k]
        elif policy == "uninformed":
            rate = sr * math.tanh(sr * (params.horizon_T - t_k)) * (merton - pos)
            merton_col[k] = rate
            sbar_col[k] = price
        elif policy == "naive_frontrun":
            if m == 0:
                avg = price
            else:
                avg = _padded_window_average(window, m, dt)
            rate = (avg - price) / lam
            frontrun_col[k] = rate
            sbar_col[k] = avg
        elif callable(policy):
            rate = policy(k, t_k, window, pos)
        else:
            raise ValueError(f"unknown policy {policy!r}")
        phi[k] = rate
        if k < n:
            position[k + 1] = pos + rate * dt

    weights = np.array([kernels.upsilon(params.horizon_T - t) for t in times])
    trace = StrategyTrace(times=times, prices=np.array(path_prices),
                          s_bar=sbar_col, phi=phi, position=position,
                          frontrun_term=frontrun_col, merton_term=merton_col,
                          window_weight=weights)
    pnl(trace, path_prices, params)
    return trace


def rollout_batch(prices: np.ndarray, params: ModelParams,
                  policy: PolicyName = "informed",
                  return_rates: bool = False):
    """Vectorized rollout over a (B, N+1) price block.

    Returns the terminal P&L vector, optionally with the (B, N+1) rate
    matrix. Matches run_policy rate-for-rate on every path.
    """
    b, n_plus = prices.shape
    n = n_plus - 1
    m = lookahead_steps(params, n)
    dt = params.horizon_T / n
    kernels = KernelSet.from_params(params)
    sr = math.sqrt(params.rho())
    merton = params.merton_position()
    lam = params.lambda_impact
    times = np.linspace(0.0, params.horizon_T, n + 1)

    if policy == "informed":
        weights = np.array([kernels.upsilon(params.horizon_T - t) for t in times])
        urg = np.array([urgency(t, params) for t in times])
    elif policy == "uninformed":
        urg = sr * np.tanh(sr * (params.horizon_T - times))
    elif policy == "naive_frontrun":
        pass
    else:
        raise ValueError(f"unknown policy {policy!r}")

    padded_idx = np.minimum(np.arange(n + 1 + m), n)
    padded = prices[:, padded_idx]
    if m > 0 and policy in ("informed", "naive_frontrun"):
        win = dt * (0.5 * padded[:, 0] + padded[:, 1:m].sum(axis=1)
                    + 0.5 * padded[:, m])
    position = np.full(b, params.phi0)
    rates = np.empty((b, n + 1)) if return_rates else None
    gain = np.zeros(b)
    impact = np.zeros(b)
    terminal = prices[:, n]

    for k in range(n + 1):
        price = prices[:, k]
        if policy == "informed":
            if m > 0:
                endpoint = padded[:, k + m]
                sbar = (1.0 - weights[k]) * endpoint \
                    + weights[k] * win / (m * dt)
            else:
                sbar = price
            rate = (sbar - price) / lam + urg[k] * (merton - position)
        elif policy == "uninformed":
            rate = urg[k] * (merton - position)
        else:  # naive_frontrun
            avg = win / (m * dt) if m > 0 else price
            rate = (avg - price) / lam
        if return_rates:
            rates[:, k] = rate
        if k < n:
            gain += rate * (terminal - price) * dt
            impact += rate * rate * dt
            position = position + rate * dt
            if m > 0 and policy in ("informed", "naive_frontrun"):
                win = win - 0.5 * dt * (padded[:, k] + padded[:, k + 1]) \
                    + 0.5 * dt * (padded[:, k + m] + padded[:, k + m + 1])

    v_t = params.phi0 * (terminal - prices[:, 0]) + gain \
        - 0.5 * lam * impact
    if return_rates:
        return v_t, rates
    return v_t


# ---------------------------------------------------------------------------
# Open-loop operator form (reduced coordinates)
# ---------------------------------------------------------------------------


class _PiecewiseLinearPath:
    """A grid path interpolated linearly, extended by its last value past T."""

    def __init__(self, values: np.ndarray, dt: float):
        self.values = np.asarray(values, dtype=float)
        self.dt = dt
        self.n = len(values) - 1
        self.horizon = self.n * dt
        # cumulative integral at grid points
        self._cum = np.concatenate(
            ([0.0], np.cumsum(0.5 * dt * (self.values[1:] + self.values[:-1]))))

    def at(self, u: float) -> float:
        if u >= self.horizon:
            return float(self.values[-1])
        j = min(int(u / self.dt), self.n - 1)
        frac = u / self.dt - j
        return float((1.0 - frac) * self.values[j] + frac * self.values[j + 1])

    def integral_to(self, u: float) -> float:
        if u >= self.horizon:
            return float(self._cum[-1] + (u - self.horizon) * self.values[-1])
        j = min(int(u / self.dt), self.n - 1)
        s_j = j * self.dt
        v_j = self.values[j]
        slope = (self.values[j + 1] - v_j) / self.dt
        du = u - s_j
        return float(self._cum[j] + v_j * du + 0.5 * slope * du * du)

    def window_mean(self, u: float, width: float) -> float:
        return (self.integral_to(u + width) - self.integral_to(u)) / width


def sbar_continuous(path: _PiecewiseLinearPath, t: float,
                    kernels: KernelSet) -> float:
    """s_bar at arbitrary (non-grid) time on a piecewise-linear path."""
    if kernels.delta == 0.0:
        return path.at(t)
    weight = kernels.upsilon(kernels.horizon - t)
    endpoint = path.at(min(t + kernels.delta, kernels.horizon))
    mean = path.window_mean(t, kernels.delta)
    return (1.0 - weight) * endpoint + weight * mean


def rollout_feedback_exact(path_values: np.ndarray, params: ModelParams,
                           t_end: float, substeps: int = 4) -> float:
    """Position Phi(t_end) from the feedback ODE along the piecewise-linear
    path, integrated with RK4 inside each grid cell (no Euler bias).
    """
    n = len(path_values) - 1
    dt = params.horizon_T / n
    kernels = KernelSet.from_params(params)
    path = _PiecewiseLinearPath(np.asarray(path_values, dtype=float), dt)
    lam = params.lambda_impact
    merton = params.merton_position()

    def f(r: float, pos: float) -> float:
        return (sbar_continuous(path, r, kernels) - path.at(r)) / lam \
            + urgency(r, params) * (merton - pos)

    pos = params.phi0
    r = 0.0
    h = dt / substeps
    steps = round(t_end / h)
    for _ in range(steps):
        k1 = f(r, pos)
        k2 = f(r + h / 2, pos + h / 2 * k1)
        k3 = f(r + h / 2, pos + h / 2 * k2)
        k4 = f(r + h, pos + h * k3)
        pos += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        r += h
    return pos


def open_loop_rate(t: float, w_path: np.ndarray,
                   reduced: ReducedParams) -> float:
    """Optimal rate at grid time t as a functional of the noise path alone.

    Works in reduced coordinates: ``w_path`` is the driftless normalized
    price on the grid (w_path[0] = 0), treated as piecewise linear. All
    kernel integrals use per-panel Gauss-Legendre, exact to quadrature
    precision for the smooth integrands involved.
    """
    w = np.asarray(w_path, dtype=float)
    n = len(w) - 1
    horizon = reduced.horizon_T
    dt = horizon / n
    k_idx = t / dt
    if abs(k_idx - round(k_idx)) > 1e-9:
        raise GridError(f"t={t} is not a grid time")
    kernel = KernelSet(rho=reduced.rho(), horizon=horizon,
                       delta=reduced.lookahead_delta)
    rho = kernel.rho
    sr = math.sqrt(rho)
    lam = reduced.lambda_r
    alpha = reduced.alpha_r
    delta = reduced.lookahead_delta

    tau_bar = min(t + delta, horizon)
    j_bar = round(tau_bar / dt)
    a_total = alpha / sr * math.tanh(sr * horizon)
    w_t = float(w[round(k_idx)])

    if j_bar == 0:
        merton_part = reduced.phi0_r * (0.0 - a_total)
        return (0.0 - w_t + merton_part) / lam

    f_anti = kernel._diag_antiderivative

    def chi(s):
        # c(s) = s ^ delta
        return np.minimum(s, delta)

    def dn(s):
        # D(s)/cosh(sqrt(rho)(T-s))
        return 1.0 + chi(s) * sr * np.tanh(sr * (horizon - s))

    def g_weight(s):
        return 1.0 / dn(s)

    def psi(s):
        return np.exp(f_anti(s)) * np.cosh(sr * (horizon - s)) / dn(s)

    def q_weight(r):
        return rho * chi(r) / (np.exp(f_anti(r))
                               * np.cosh(sr * (horizon - r)) * dn(r))

    def a_rate(s):
        return alpha * np.cosh(sr * (horizon - s)) / math.cosh(sr * horizon)

    edges = np.linspace(0.0, tau_bar, j_bar + 1)
    nodes, wts = gauss_panel_nodes(edges)          # (j_bar, 8)
    slopes = (w[1:j_bar + 1] - w[:j_bar]) / dt

    g_nodes = g_weight(nodes)
    t1_w = float(np.sum(slopes * np.sum(g_nodes * wts, axis=1)))
    t1_a = float(np.sum(g_nodes * a_rate(nodes) * wts))

    # Psi(s) = int_0^s psi; cumulative at panel edges, then partial inside
    psi_nodes = psi(nodes)
    panel_ints = np.sum(psi_nodes * wts, axis=1)
    psi_edges = np.concatenate(([0.0], np.cumsum(panel_ints)))
    psi_at_tau = psi_edges[-1]

    # nested Gauss for Psi at the outer nodes
    inner_half = 0.5 * (nodes - edges[:-1][:, None])          # (j_bar, 8)
    gl_x, gl_w = np.polynomial.legendre.leggauss(8)
    inner_nodes = edges[:-1][:, None, None] \
        + inner_half[:, :, None] * (gl_x[None, None, :] + 1.0)
    inner_vals = psi(inner_nodes)
    psi_partial = np.sum(inner_vals * gl_w[None, None, :], axis=2) * inner_half
    psi_at_nodes = psi_edges[:-1][:, None] + psi_partial

    q_nodes = q_weight(nodes)
    resid = psi_at_tau - psi_at_nodes
    t2_w = float(np.sum(slopes * np.sum(q_nodes * resid * wts, axis=1)))
    t2_a = float(np.sum(q_nodes * a_rate(nodes) * resid * wts))

    i_w = t1_w + t2_w
    i_a = t1_a + t2_a
    return (i_w - w_t + reduced.phi0_r * (i_a - a_total)) / lam

"""Discretized dual problem: independent minimization cross-checking the
closed forms.

The dual target, restricted to deterministic controls (a, l(., s)), is a
strictly convex quadratic once time is discretized with left-endpoint
Riemann sums on m knots. Its exact minimizers (by conjugate gradient)
converge to the closed-form kernels and values at first order in 1/m; none
of the closed forms enter the minimization itself.

A second, fully discrete route works on finite scenario trees: the relative
entropy functional over scenario reweightings is minimized by mirror
descent and compared against a brute-force primal policy search, verifying
strong duality to tree-exact precision.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .kernels import KernelSet
from .params import ReducedParams


# ---------------------------------------------------------------------------
# Discretized deterministic dual functional
# ---------------------------------------------------------------------------


@dataclass
class DualControl:
    """Deterministic dual control on m left-endpoint knots of [0, T].

    ``l[i, j]`` is the feedback kernel value at (t_i, s_j); only the lower
    triangle j <= i is meaningful and the rest must be zero.
    """

    grid: np.ndarray   # (m,) knots i*h
    a: np.ndarray      # (m,)
    l: np.ndarray      # (m, m), lower-triangular

    def __post_init__(self):
        m = len(self.grid)
        if self.a.shape != (m,) or self.l.shape != (m, m):
            raise ValueError("inconsistent control shapes")
        if not np.all(np.isfinite(self.a)) or not np.all(np.isfinite(self.l)):
            raise ValueError("controls must be finite")
        if np.any(np.triu(self.l, k=1) != 0.0):
            raise ValueError("l must vanish above the diagonal")


def _tail_sums(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Inclusive reverse cumulative sums along an axis."""
    return np.flip(np.cumsum(np.flip(x, axis=axis), axis=axis), axis=axis)


def control_grid(reduced: ReducedParams, m: int) -> np.ndarray:
    h = reduced.horizon_T / m
    return np.arange(m) * h


def sampled_control(reduced: ReducedParams, m: int) -> DualControl:
    """DualControl sampled from the closed-form minimizers."""
    grid = control_grid(reduced, m)
    kern = KernelSet(rho=reduced.rho(), horizon=reduced.horizon_T,
                     delta=reduced.lookahead_delta)
    a = np.array([kern.a_hat(t, reduced.alpha_r) for t in grid]) \
        * reduced.phi0_r
    l = np.zeros((m, m))
    for j, s in enumerate(grid):
        for i in range(j, m):
            l[i, j] = kern.l_hat(grid[i], s)
    return DualControl(grid=grid, a=a, l=l)


def dual_functional(ctrl: DualControl, reduced: ReducedParams) -> float:
    """Left-endpoint Riemann discretization of the dual target."""
    m = len(ctrl.grid)
    h = reduced.horizon_T / m
    alpha, lam = reduced.alpha_r, reduced.lambda_r
    phi0 = reduced.phi0_r
    delta = reduced.lookahead_delta

    a = ctrl.a
    tails_a = h * _tail_sums(a)
    value = (-phi0 * h * a.sum()
             + h / (2.0 * alpha) * float(a @ a)
             + h / (2.0 * lam) * float(tails_a @ tails_a))

    mask = np.tril(np.ones((m, m)))
    l = ctrl.l * mask
    tails_l = h * _tail_sums(l, axis=0) * mask
    c = np.minimum(ctrl.grid, delta)
    col_sq = h / (2.0 * alpha) * np.sum(l * l, axis=0)
    col_tail_sq = h / (2.0 * lam) * np.sum(tails_l * tails_l, axis=0)
    col_total = h * np.sum(l, axis=0)
    col_penalty = c / (2.0 * lam) * (1.0 - col_total) ** 2
    value += h * float(np.sum(col_sq + col_tail_sq + col_penalty))
    return value


def dual_functional_gradient(ctrl: DualControl,
                             reduced: ReducedParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient (d/da, d/dl) of the discretized dual target."""
    m = len(ctrl.grid)
    h = reduced.horizon_T / m
    alpha, lam = reduced.alpha_r, reduced.lambda_r
    delta = reduced.lookahead_delta
    grad_a = (-reduced.phi0_r * h
              + (h / alpha) * ctrl.a
              + (h ** 3 / lam) * np.cumsum(_tail_sums(ctrl.a)))
    mask = np.tril(np.ones((m, m)))
    l = ctrl.l * mask
    tails = _tail_sums(l, axis=0) * mask
    c = np.minimum(ctrl.grid, delta)
    col_total = h * np.sum(l, axis=0)
    # the l-part carries the outer ds measure (one extra h) relative to the
    # a-part
    grad_l = ((h ** 2 / alpha) * l
              + (h ** 4 / lam) * np.cumsum(tails, axis=0)
              - (h ** 2 / lam) * c[None, :] * (1.0 - col_total)[None, :])
    return grad_a, grad_l * mask


# ---------------------------------------------------------------------------
# Conjugate-gradient minimizers
# ---------------------------------------------------------------------------


def _cg(matvec, b: np.ndarray, rtol: float = 1e-13,
        max_iter: int | None = None) -> np.ndarray:
    """Plain conjugate gradient for an SPD operator, to a relative residual."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = rtol * math.sqrt(float(b @ b))
    if math.sqrt(rs) <= target:
        return x
    max_iter = max_iter or 20 * len(b) + 100
    for _ in range(max_iter):
        ap = matvec(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= target:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise RuntimeError("conjugate gradient did not reach the residual target")


def minimize_a(reduced: ReducedParams, m: int) -> tuple[np.ndarray, float]:
    """Exact minimizer of the deterministic-tilt part on m knots.

    Solves ((1/alpha) I + (h^2/lambda) U^T U) a = phi0 * 1 by CG; the value
    reported is the discretized functional at the minimizer.
    """
    if m < 4:
        raise ValueError("need m >= 4 knots")
    h = reduced.horizon_T / m
    alpha, lam = reduced.alpha_r, reduced.lambda_r

    def matvec(x):
        return x / alpha + (h * h / lam) * np.cumsum(_tail_sums(x))

    a = _cg(matvec, np.full(m, reduced.phi0_r))
    tails = h * _tail_sums(a)
    value = (-reduced.phi0_r * h * a.sum()
             + h / (2.0 * alpha) * float(a @ a)
             + h / (2.0 * lam) * float(tails @ tails))
    return a, value


def _minimize_l_system(c: float, h: float, n: int,
                       reduced: ReducedParams) -> tuple[np.ndarray, float]:
    alpha, lam = reduced.alpha_r, reduced.lambda_r

    def matvec(x):
        return (x / alpha + (h * h / lam) * np.cumsum(_tail_sums(x))
                + (c * h / lam) * x.sum())

    l = _cg(matvec, np.full(n, c / lam))
    tails = h * _tail_sums(l)
    value = (h / (2.0 * alpha) * float(l @ l)
             + h / (2.0 * lam) * float(tails @ tails)
             + c / (2.0 * lam) * (1.0 - h * l.sum()) ** 2)
    return l, value


def minimize_l(s: float, reduced: ReducedParams,
               m: int) -> tuple[np.ndarray, float]:
    """Exact minimizer of the per-s noise-feedback part on m knots of [s, T].

    At the degenerate boundary s = T the limit value (T^delta)/(2*lambda) is
    returned directly with an empty control.
    """
    horizon = reduced.horizon_T
    if not 0.0 <= s <= horizon:
        raise ValueError(f"s={s!r} outside [0, T]")
    c = min(s, reduced.lookahead_delta)
    if s >= horizon:
        return np.zeros(0), c / (2.0 * reduced.lambda_r)
    if m < 4:
        raise ValueError("need m >= 4 knots")
    if c == 0.0:
        return np.zeros(m), 0.0
    h = (horizon - s) / m
    return _minimize_l_system(c, h, m, reduced)


def minimize_l_theta(s: float, reduced: ReducedParams) -> dict:
    """One-dimensional boundary-value reduction of the per-s minimization.

    Minimizes (1/2 lambda) * [coth(sqrt(rho)(T-s))/sqrt(rho) * theta^2
    + (s^delta)(1-theta)^2] by Brent search and reports the vertex next to
    its closed form; the minimum value equals L_hat(s).
    """
    rho = reduced.rho()
    sr = math.sqrt(rho)
    horizon = reduced.horizon_T
    if not 0.0 <= s < horizon:
        raise ValueError("need 0 <= s < T")
    c = min(s, reduced.lookahead_delta)
    lam = reduced.lambda_r
    coth = 1.0 / math.tanh(sr * (horizon - s))

    def objective(theta):
        return (coth / sr * theta ** 2 + c * (1.0 - theta) ** 2) / (2.0 * lam)

    res = minimize_scalar(objective)
    theta_closed = c * sr / (coth + c * sr)
    value_closed = c / (2.0 * lam * (1.0 + c * sr * math.tanh(sr * (horizon - s))))
    return {
        "theta_numeric": float(res.x),
        "theta_closed_form": theta_closed,
        "value_numeric": float(res.fun),
        "value_closed_form": value_closed,
    }


def dual_value_assembly(reduced: ReducedParams, m: int) -> float:
    """Assembled discrete dual value: tilt minimum plus h * sum of per-knot
    noise-feedback minima on the master grid. Converges to the closed-form
    dual value at first order in 1/m.
    """
    horizon = reduced.horizon_T
    h = horizon / m
    _, value = minimize_a(reduced, m)
    total = value
    for j in range(m):
        s = j * h
        c = min(s, reduced.lookahead_delta)
        if c == 0.0:
            continue
        n = m - j
        _, v_j = _minimize_l_system(c, h, n, reduced)
        total += h * v_j
    return total


def oracle_ladder(reduced: ReducedParams, m_values: tuple[int, ...],
                  closed_form: float) -> dict:
    """Assembly values over an m-ladder with observed convergence order."""
    rungs = []
    for m in m_values:
        value = dual_value_assembly(reduced, m)
        rungs.append({"m": m, "value": value,
                      "abs_err": abs(value - closed_form)})
    orders = []
    for lo, hi in zip(rungs[:-1], rungs[1:]):
        ratio_m = hi["m"] / lo["m"]
        if hi["abs_err"] > 0 and lo["abs_err"] > 0:
            orders.append(math.log(lo["abs_err"] / hi["abs_err"])
                          / math.log(ratio_m))
    # pairwise orders approach the asymptotic rate from below; report the
    # finest pair as the observed order
    return {
        "closed_form": closed_form,
        "rungs": rungs,
        "observed_order": orders[-1] if orders else math.nan,
        "observed_orders": orders,
    }


# ---------------------------------------------------------------------------
# Finite scenario trees: entropy functional vs brute-force primal
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Finite product market: at step k the price moves by one of the listed
    increments. Decisions at step k see the path up to step
    min(k + lookahead_steps, n). The appendix normalization alpha = 1,
    lambda = 2, phi0 = 0 is hardwired.
    """

    dt: float
    step_values: tuple[tuple[float, ...], ...]
    step_probs: tuple[tuple[float, ...], ...]
    lookahead_steps: int = 0
    s0: float = 0.0
    prices: np.ndarray = field(init=False)   # (n_leaves, n_steps+1)
    probs: np.ndarray = field(init=False)    # (n_leaves,)

    def __post_init__(self):
        if len(self.step_values) != len(self.step_probs):
            raise ValueError("mismatched step specs")
        n = len(self.step_values)
        combos = list(itertools.product(*[range(len(v))
                                          for v in self.step_values]))
        leaves = len(combos)
        prices = np.empty((leaves, n + 1))
        probs = np.ones(leaves)
        prices[:, 0] = self.s0
        for idx, combo in enumerate(combos):
            level = self.s0
            for k, choice in enumerate(combo):
                level += self.step_values[k][choice]
                prices[idx, k + 1] = level
                probs[idx] *= self.step_probs[k][choice]
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("step probabilities must each sum to one")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "probs", probs)

    @property
    def n_steps(self) -> int:
        return len(self.step_values)

    @property
    def n_leaves(self) -> int:
        return len(self.probs)

    def group_size(self, k: int) -> int:
        """Leaves per information set at decision step k."""
        kappa = min(k + self.lookahead_steps, self.n_steps)
        size = 1
        for values in self.step_values[kappa:]:
            size *= len(values)
        return size


def _group_means(weights: np.ndarray, x: np.ndarray, size: int) -> np.ndarray:
    """Per-leaf conditional means of x over contiguous groups of ``size``."""
    w = weights.reshape(-1, size)
    num = (w * x.reshape(-1, size)).sum(axis=1)
    den = w.sum(axis=1)
    means = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return np.repeat(means, size)


def xi_functional(tree: ScenarioTree, xi: np.ndarray) -> float:
    """Relative-entropy dual target on the tree (alpha=1, lambda=2).

    E[xi log xi] + (1/4) E_{R(xi)}[ sum_k (E_{R(xi),k}[S_n] - S_k)^2 dt ]
    with the convention 0 log 0 = 0.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != tree.probs.shape or np.any(xi < 0.0):
        raise ValueError("xi must be a nonnegative vector over the leaves")
    if abs(float(tree.probs @ xi) - 1.0) > 1e-9:
        raise ValueError("xi must have unit expectation")
    q = tree.probs * xi
    pos = xi > 0.0
    entropy = float(np.sum(q[pos] * np.log(xi[pos])))
    quad_term = 0.0
    s_n = tree.prices[:, -1]
    for k in range(tree.n_steps):
        x = s_n - tree.prices[:, k]
        e = _group_means(q, x, tree.group_size(k))
        quad_term += tree.dt * float(q @ (e * e))
    return entropy + 0.25 * quad_term


def _xi_gradient(tree: ScenarioTree, q: np.ndarray) -> np.ndarray:
    """Gradient of the functional with respect to the leaf weights q."""
    grad = np.log(q / tree.probs) + 1.0
    s_n = tree.prices[:, -1]
    for k in range(tree.n_steps):
        x = s_n - tree.prices[:, k]
        e = _group_means(q, x, tree.group_size(k))
        grad += 0.25 * tree.dt * (2.0 * x * e - e * e)
    return grad


def minimize_xi(tree: ScenarioTree, tol: float = 1e-11,
                max_iter: int = 100000) -> dict:
    """Entropic mirror descent over the scenario simplex.

    The minimizer is interior (strict positivity), so multiplicative updates
    with backtracking converge; iteration stops when the simplex-projected
    gradient falls below ``tol``.
    """
    q = tree.probs.copy()
    value = xi_functional(tree, q / tree.probs)
    step = 1.0
    for _ in range(max_iter):
        grad = _xi_gradient(tree, q)
        centered = grad - float(q @ grad)
        if np.max(np.abs(centered)) < tol:
            break
        improved = False
        while step >= 1e-14:
            trial = q * np.exp(-step * centered)
            trial /= trial.sum()
            trial_value = xi_functional(tree, trial / tree.probs)
            if trial_value < value:
                q, value = trial, trial_value
                improved = True
                break
            step *= 0.5
        if not improved:
            break  # stagnated at floating-point resolution
        step = min(step * 2.0, 4.0)
    grad = _xi_gradient(tree, q)
    centered = grad - float(q @ grad)
    return {
        "xi": q / tree.probs,
        "value": value,
        "projected_gradient_sup": float(np.max(np.abs(centered))),
    }


def _strategy_layout(tree: ScenarioTree) -> list[tuple[int, int, int]]:
    """(step, group size, variable offset) per decision step."""
    layout = []
    offset = 0
    for k in range(tree.n_steps):
        size = tree.group_size(k)
        layout.append((k, size, offset))
        offset += tree.n_leaves // size
    return layout


def _tree_pnl(tree: ScenarioTree, x: np.ndarray,
              layout: list[tuple[int, int, int]], lam: float) -> np.ndarray:
    s_n = tree.prices[:, -1]
    v = np.zeros(tree.n_leaves)
    for k, size, offset in layout:
        rates = np.repeat(x[offset:offset + tree.n_leaves // size], size)
        v += rates * (s_n - tree.prices[:, k]) * tree.dt \
            - 0.5 * lam * rates * rates * tree.dt
    return v


def tree_expected_utility(tree: ScenarioTree, x: np.ndarray,
                          lam: float = 2.0) -> float:
    layout = _strategy_layout(tree)
    v = _tree_pnl(tree, x, layout, lam)
    return float(tree.probs @ (-np.exp(-v)))


def tree_primal_max(tree: ScenarioTree, lam: float = 2.0,
                    n_starts: int = 3, seed: int = 0,
                    value_tol: float = 1e-10,
                    max_sweeps: int = 400) -> dict:
    """Brute-force primal search: coordinate descent with Brent line
    minimization per node variable, from several starts."""
    layout = _strategy_layout(tree)
    n_vars = sum(tree.n_leaves // size for _, size, _ in layout)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(n_vars)]
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(-1.0, 1.0, size=n_vars))

    best_value = -math.inf
    best_x = None
    for x0 in starts:
        x = x0.copy()
        value = tree_expected_utility(tree, x, lam)
        for _ in range(max_sweeps):
            previous = value
            for v_idx in range(n_vars):
                def neg(u, idx=v_idx):
                    trial = x.copy()
                    trial[idx] = u
                    return -tree_expected_utility(tree, trial, lam)

                res = minimize_scalar(neg)
                if -res.fun > value:
                    x[v_idx] = float(res.x)
                    value = -res.fun
            if value - previous < value_tol:
                break
        if value > best_value:
            best_value, best_x = value, x
    return {"max_utility": best_value, "strategy": best_x}


def tree_duality_gap(tree: ScenarioTree, **kwargs) -> dict:
    """|min Xi + log(-max primal)| on the tree; ~0 by strong duality."""
    dual = minimize_xi(tree)
    primal = tree_primal_max(tree, **kwargs)
    gap = dual["value"] + math.log(-primal["max_utility"])
    return {"dual_min": dual["value"], "primal_max": primal["max_utility"],
            "gap": gap}

"""Verification battery: every check returns a CheckResult with measured
values, and the battery doubles as the engine behind the ``verify`` CLI
subcommand. The fast suite runs closed-form identities and oracle ladders;
the full suite adds the Monte Carlo criteria.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import analytics, dual_oracle, market_sim, policy
from .kernels import KernelSet
from .numerics import quad
from .params import ModelParams, REFERENCE_PARAMS


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    measured: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "seconds": self.seconds, "measured": self.measured}


def _timed(fn):
    def wrapper(*args, **kwargs) -> CheckResult:
        start = time.perf_counter()
        name, passed, measured = fn(*args, **kwargs)
        return CheckResult(name=name, passed=passed,
                           seconds=time.perf_counter() - start,
                           measured=measured)
    wrapper.__name__ = fn.__name__
    return wrapper


RESOLVENT_PARAM_SETS = (
    REFERENCE_PARAMS,
    ModelParams(sigma=0.3, lambda_impact=0.01, alpha=0.03, horizon_T=10.0,
                lookahead_delta=0.0),
    ModelParams(sigma=0.3, lambda_impact=0.01, alpha=0.03, horizon_T=10.0,
                lookahead_delta=10.0),
    ModelParams(sigma=0.3, lambda_impact=0.01, alpha=0.03, horizon_T=10.0,
                lookahead_delta=15.0),
    ModelParams(sigma=1.0, lambda_impact=0.5, alpha=1.0, horizon_T=2.0,
                lookahead_delta=0.5),
)


def resolvent_residual_with(kern: KernelSet, t: float, s: float,
                            k_hat_fn=None) -> float:
    """Residual of the resolvent identity with a pluggable k-kernel.

    The hook exists so the verification of the identity can be shown to
    catch a corrupted kernel (e.g. a flipped sign).
    """
    k_fn = k_hat_fn or kern.k_hat
    integral = quad(lambda u: kern.l_hat(t, u) * k_fn(u, s), s, t,
                    breakpoints=[kern.delta])
    return k_fn(t, s) + kern.l_hat(t, s) - integral


@_timed
def check_resolvent_identity(grid_points: int = 20, tol: float = 1e-8,
                             k_hat_fn_factory=None):
    """A1: resolvent identity residual on a triangular grid, 5 parameter sets."""
    worst = 0.0
    for params in RESOLVENT_PARAM_SETS:
        kern = KernelSet.from_params(params)
        times = np.linspace(0.0, params.horizon_T, grid_points)
        k_fn = k_hat_fn_factory(kern) if k_hat_fn_factory else None
        for i, t in enumerate(times):
            for s in times[:i + 1]:
                if k_fn is None:
                    res = abs(kern.resolvent_residual(float(t), float(s)))
                else:
                    res = abs(resolvent_residual_with(
                        kern, float(t), float(s), k_hat_fn=k_fn))
                worst = max(worst, res)
    return "resolvent_identity", worst < tol, {"max_residual": worst,
                                               "tol": tol}


def random_params(rng: np.random.Generator) -> ModelParams:
    """Moderate random parameter set keeping all exponents in float range."""
    sigma = rng.uniform(0.1, 1.5)
    alpha = rng.uniform(0.02, 1.5)
    lam = rng.uniform(0.01, 1.5)
    horizon = rng.uniform(0.5, 12.0)
    delta = rng.uniform(0.0, 1.3) * horizon
    mu = rng.uniform(-0.4, 0.4)
    merton = mu / (alpha * sigma ** 2)
    phi0 = merton + rng.uniform(-3.0, 3.0)
    return ModelParams(s0=rng.uniform(-2, 2), mu=mu, sigma=sigma,
                       lambda_impact=lam, alpha=alpha, horizon_T=horizon,
                       lookahead_delta=delta, phi0=phi0)


@_timed
def check_duality_identity(n_sets: int = 20, seed: int = 2024,
                           tol: float = 1e-10):
    """A2: -(1/alpha) log(-primal) == mapped dual value, random parameters."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_sets):
        params = random_params(rng)
        lhs = -math.log(-analytics.primal_value(params)) / params.alpha
        rhs = analytics.dual_value_mapped(params)
        rel = abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
        worst = max(worst, rel)
    return "duality_identity", worst < tol, {"max_rel_gap": worst, "tol": tol}


POLICY_FORM_PARAM_SETS = (
    REFERENCE_PARAMS,
    ModelParams(mu=-0.2, sigma=1.0, lambda_impact=0.5, alpha=2.0,
                horizon_T=4.0, lookahead_delta=0.5, phi0=1.0),
    ModelParams(mu=0.05, sigma=0.5, lambda_impact=0.05, alpha=0.1,
                horizon_T=8.0, lookahead_delta=2.0, phi0=-2.0),
)


@_timed
def check_policy_forms(n_initial_paths: int = 100, n_openloop_paths: int = 10,
                       n_steps: int = 200, seed: int = 314,
                       tol_initial: float = 1e-9, tol_openloop: float = 2e-6):
    """A4: feedback(0) == closed-form initial rate; open loop == rolled-out
    feedback at t in {0, T/4, T/2}."""
    worst_initial = 0.0
    params = REFERENCE_PARAMS
    ens = market_sim.simulate(params, n_initial_paths, n_steps, seed)
    m = ens.lookahead_window_steps()
    dt = ens.dt
    for i in range(n_initial_paths):
        prices = ens.prices[i]
        window = market_sim.lookahead_view(prices, 0, m)
        inputs = policy.PolicyInputs(t=0.0, price_window=window,
                                     current_position=params.phi0,
                                     current_price=prices[0], dt=dt)
        fb = policy.feedback_rate(inputs, params)
        ir = policy.initial_rate_closed_form(
            prices[:min(m, n_steps) + 1], params, dt)
        worst_initial = max(worst_initial, abs(fb - ir) / max(1.0, abs(fb)))

    worst_open = 0.0
    for p_idx, params in enumerate(POLICY_FORM_PARAM_SETS):
        red = params.reduce()
        reduced_params = red.as_model_params()
        ens = market_sim.simulate(reduced_params, n_openloop_paths, n_steps,
                                  seed + 1 + p_idx)
        m = ens.lookahead_window_steps()
        dt = ens.dt
        for i in range(n_openloop_paths):
            w = ens.prices[i]
            for t in (0.0, params.horizon_T / 4.0, params.horizon_T / 2.0):
                open_rate = policy.open_loop_rate(t, w, red)
                pos = policy.rollout_feedback_exact(w, reduced_params, t)
                k = round(t / dt)
                window = market_sim.lookahead_view(w, k, m)
                inputs = policy.PolicyInputs(
                    t=t, price_window=window, current_position=pos,
                    current_price=w[k], dt=dt)
                fb = policy.feedback_rate(inputs, reduced_params)
                worst_open = max(worst_open, abs(open_rate - fb))
    passed = worst_initial < tol_initial and worst_open < tol_openloop
    return "policy_form_equivalence", passed, {
        "max_initial_rate_rel_diff": worst_initial,
        "max_openloop_abs_diff": worst_open,
        "tol_initial": tol_initial, "tol_openloop": tol_openloop,
    }


@_timed
def check_reduction_closed_form(n_sets: int = 20, seed: int = 99,
                                tol: float = 1e-9):
    """A5 (closed-form half): primal value directly vs via the reduction."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_sets):
        params = random_params(rng)
        red = params.reduce()
        direct = analytics.primal_value(params)
        via = math.exp(-red.entropy_shift) \
            * analytics.primal_value(red.as_model_params())
        worst = max(worst, abs(direct - via) / max(abs(direct), 1e-300))
    return "reduction_consistency_closed_form", worst < tol, {
        "max_rel_diff": worst, "tol": tol}


@_timed
def check_certainty_equivalent_properties(tol_rate: float = 0.01):
    """A10: c(0)=0, strict monotonicity in delta, mu-invariance, accrual rate."""
    base = REFERENCE_PARAMS
    zero = analytics.certainty_equivalent(
        ModelParams(**{**base.to_dict(), "lookahead_delta": 0.0}))
    deltas = np.linspace(base.horizon_T / 20.0, base.horizon_T, 20)
    values = [analytics.certainty_equivalent(
        ModelParams(**{**base.to_dict(), "lookahead_delta": float(d)}))
        for d in deltas]
    monotone = all(b > a for a, b in zip(values, values[1:]))

    mu_variants = []
    for mu in (-1.0, 0.0, 1.0):
        params = ModelParams(**{**base.to_dict(), "mu": mu})
        mu_variants.append(analytics.certainty_equivalent(params))
    mu_invariant = mu_variants[0] == mu_variants[1] == mu_variants[2]

    horizon = 100.0
    rate = base.alpha * (
        analytics.certainty_equivalent(
            ModelParams(**{**base.to_dict(), "horizon_T": horizon + 0.5}))
        - analytics.certainty_equivalent(
            ModelParams(**{**base.to_dict(), "horizon_T": horizon - 0.5})))
    sr = math.sqrt(base.rho())
    target = base.lookahead_delta * base.rho() \
        / (2.0 * (1.0 + base.lookahead_delta * sr))
    rate_rel_err = abs(rate - target) / target
    passed = (zero == 0.0 and monotone and mu_invariant
              and rate_rel_err < tol_rate)
    return "certainty_equivalent_properties", passed, {
        "ce_at_zero": zero, "strictly_increasing": monotone,
        "mu_invariant": mu_invariant, "accrual_rate": rate,
        "accrual_target": target, "accrual_rel_err": rate_rel_err,
    }


@_timed
def check_dual_oracle_ladder(m_values: tuple[int, ...] = (64, 128, 256, 512,
                                                          1024, 2048, 4096),
                             m_assembly: tuple[int, ...] = (64, 128, 256,
                                                            512, 1024),
                             m_final: int = 4096,
                             assembly_rel_tol: float = 1e-3):
    """A8: value and knotwise convergence of the discretized minimizers."""
    params = REFERENCE_PARAMS
    red = params.reduce()
    kern = KernelSet.from_params(params)

    target_a = -kern.A_hat(red.lambda_r) * red.phi0_r ** 2
    value_errs, knot_errs = [], []
    for m in m_values:
        a, val = dual_oracle.minimize_a(red, m)
        grid = dual_oracle.control_grid(red, m)
        closed = np.array([kern.a_hat(t, red.alpha_r) for t in grid]) \
            * red.phi0_r
        value_errs.append(abs(val - target_a))
        knot_errs.append(float(np.max(np.abs(a - closed))))
    orders_a = [math.log2(value_errs[i] / value_errs[i + 1])
                for i in range(len(value_errs) - 1)]
    knot_ratios = [knot_errs[i] / knot_errs[i + 1]
                   for i in range(len(knot_errs) - 1)]

    s_probe = 0.3 * params.horizon_T
    target_l = kern.L_hat(s_probe, red.lambda_r)
    l_errs = []
    for m in m_values:
        _, val = dual_oracle.minimize_l(s_probe, red, m)
        l_errs.append(abs(val - target_l))
    orders_l = [math.log2(l_errs[i] / l_errs[i + 1])
                for i in range(len(l_errs) - 1)]

    closed_dual = analytics.dual_value(params)
    ladder = dual_oracle.oracle_ladder(red, m_assembly, closed_dual)
    half_value = dual_oracle.dual_value_assembly(red, m_final // 2)
    final_value = dual_oracle.dual_value_assembly(red, m_final)
    final_rel = abs(final_value - closed_dual) / abs(closed_dual)
    # Richardson extrapolation confirming the 1/m leading error term
    richardson_rel = abs(2.0 * final_value - half_value - closed_dual) \
        / abs(closed_dual)

    passed = (orders_a[-1] > 0.98 and min(orders_a) > 0.9
              and orders_l[-1] > 0.98 and min(orders_l) > 0.9
              and all(1.8 < r < 2.2 for r in knot_ratios)
              and ladder["observed_order"] > 0.95
              and final_rel < assembly_rel_tol
              and richardson_rel < 0.1 * final_rel)
    return "dual_oracle_convergence", passed, {
        "value_orders_a": orders_a, "knot_error_ratios": knot_ratios,
        "value_orders_l": orders_l,
        "assembly_ladder": ladder, "assembly_final_m": m_final,
        "assembly_final_rel_err": final_rel,
        "assembly_richardson_rel_err": richardson_rel,
        "assembly_rel_tol": assembly_rel_tol,
    }


def reference_trees() -> tuple[dual_oracle.ScenarioTree, ...]:
    binom = ((-0.8, 1.0), (0.55, 0.45))
    return (
        dual_oracle.ScenarioTree(dt=0.5, step_values=(binom[0],) * 2,
                                 step_probs=(binom[1],) * 2),
        dual_oracle.ScenarioTree(dt=0.5, step_values=(binom[0],) * 2,
                                 step_probs=(binom[1],) * 2,
                                 lookahead_steps=1),
        dual_oracle.ScenarioTree(
            dt=1.0 / 3.0, step_values=((-1.0, 0.1, 0.9),) * 3,
            step_probs=((0.3, 0.45, 0.25),) * 3, lookahead_steps=1),
    )


@_timed
def check_tree_duality(tol: float = 1e-4):
    """A9: |min Xi + log(-primal max)| on 2- and 3-step scenario trees."""
    gaps = []
    for tree in reference_trees():
        res = dual_oracle.tree_duality_gap(tree)
        gaps.append(abs(res["gap"]))
    worst = max(gaps)
    return "tree_strong_duality", worst < tol, {"gaps": gaps, "tol": tol}


@_timed
def check_mc_value(n_paths: int = 100000,
                   n_steps_list: tuple[int, ...] = (500, 1000, 2000),
                   seed: int = 1234, workers: int = 1):
    """A3: extrapolated informed-policy MC utility vs the closed form."""
    params = REFERENCE_PARAMS
    primal = analytics.primal_value(params)
    res = analytics.mc_value_extrapolated(params, n_paths, n_steps_list, seed,
                                          workers=workers)
    gap = abs(res["extrapolated_mean"] - primal)
    sigmas = gap / res["extrapolated_se"]
    return "mc_value_match", sigmas < 3.0, {
        "primal_closed_form": primal, **res, "gap_in_sigmas": sigmas}


@_timed
def check_dominance(n_paths: int = 100000, n_steps: int = 500,
                    seed: int = 4321, batch_size: int = 16384):
    """A6: informed utility dominates uninformed and naive frontrunning
    under common random numbers (paired 3-sigma)."""
    params = REFERENCE_PARAMS
    sums = {p: 0.0 for p in policy.POLICIES}
    diff_sums = {p: 0.0 for p in ("uninformed", "naive_frontrun")}
    diff_sq = {p: 0.0 for p in ("uninformed", "naive_frontrun")}
    count = 0
    offset = 0
    while offset < n_paths:
        size = min(batch_size, n_paths - offset)
        ens = market_sim.simulate(params, size, n_steps, seed,
                                  path_offset=offset)
        utilities = {}
        for pol in policy.POLICIES:
            v = policy.rollout_batch(ens.prices, params, pol)
            utilities[pol], _ = analytics.utilities_from_pnl(v, params.alpha)
            sums[pol] += float(np.sum(utilities[pol]))
        for pol in ("uninformed", "naive_frontrun"):
            d = utilities["informed"] - utilities[pol]
            diff_sums[pol] += float(np.sum(d))
            diff_sq[pol] += float(np.sum(d * d))
        count += size
        offset += size
    measured = {"means": {p: sums[p] / count for p in policy.POLICIES}}
    passed = True
    for pol in ("uninformed", "naive_frontrun"):
        mean = diff_sums[pol] / count
        var = max(diff_sq[pol] / count - mean * mean, 0.0)
        se = math.sqrt(var / count)
        measured[f"informed_minus_{pol}"] = {"mean": mean, "se": se}
        passed = passed and mean >= -3.0 * se
    return "dominance_ordering", passed, measured


@_timed
def check_perturbation_optimality(n_paths: int = 100000, n_steps: int = 500,
                                  seed: int = 777):
    """A7: informed policy survives first-order perturbations and the
    symmetric-pair concavity check."""
    report = analytics.perturbation_test(REFERENCE_PARAMS, n_paths, n_steps,
                                         seed)
    return "perturbation_optimality", report.all_within_3sigma(), {
        "rate_scale": report.rate_scale,
        "entries": report.entries, "pair_entries": report.pair_entries,
    }


@_timed
def check_reduction_mc(n_paths: int = 40000, n_steps: int = 500,
                       seed: int = 555):
    """A5 (MC half): utilities in original vs reduced coordinates."""
    params = REFERENCE_PARAMS
    red = params.reduce()
    est_orig = analytics.mc_expected_utility("informed", params, n_paths,
                                             n_steps, seed)
    est_red = analytics.mc_expected_utility("informed",
                                            red.as_model_params(), n_paths,
                                            n_steps, seed + 1)
    factor = math.exp(-red.entropy_shift)
    gap = est_orig.mean - factor * est_red.mean
    se = math.sqrt(est_orig.std_error ** 2
                   + (factor * est_red.std_error) ** 2)
    return "reduction_consistency_mc", abs(gap) < 3.0 * se, {
        "original_mean": est_orig.mean, "reduced_mean_mapped":
        factor * est_red.mean, "gap": gap, "combined_se": se}


FAST_CHECKS = (
    check_resolvent_identity,
    check_duality_identity,
    check_policy_forms,
    check_reduction_closed_form,
    check_certainty_equivalent_properties,
    check_tree_duality,
)

FULL_CHECKS = (
    check_dual_oracle_ladder,
    check_mc_value,
    check_dominance,
    check_perturbation_optimality,
    check_reduction_mc,
)


def run_suite(full: bool = False, workers: int = 1) -> list[CheckResult]:
    results = [check() for check in FAST_CHECKS]
    if full:
        results.append(check_dual_oracle_ladder())
        results.append(check_mc_value(workers=workers))
        results.append(check_dominance())
        results.append(check_perturbation_optimality())
        results.append(check_reduction_mc())
    else:
        results.append(check_dual_oracle_ladder(
            m_values=(64, 128, 256, 512), m_assembly=(64, 128, 256),
            m_final=1024, assembly_rel_tol=3e-3))
    return results

import json
import math

import numpy as np
import pytest

from lookahead_trader import analytics, market_sim, policy
from lookahead_trader.analytics import (certainty_equivalent, dual_value,
                                        dual_value_mapped, duality_gap,
                                        mc_expected_utility,
                                        perturbation_test, primal_value,
                                        value_report)
from lookahead_trader.params import ModelParams
from lookahead_trader.verify import random_params

from conftest import make_params


# -- closed forms -------------------------------------------------------------

def test_primal_value_do_nothing_case():
    p = make_params(mu=0.0, phi0=0.0, lookahead_delta=0.0)
    assert primal_value(p) == -1.0


def test_primal_value_at_merton_position():
    p = make_params(lookahead_delta=0.0, phi0=make_params().merton_position())
    expected = -math.exp(-0.5 * p.mu ** 2 * p.horizon_T / p.sigma ** 2)
    assert primal_value(p) == pytest.approx(expected, rel=1e-14)
    assert primal_value(p) < 0.0


def test_certainty_equivalent_zero_without_lookahead():
    assert certainty_equivalent(make_params(lookahead_delta=0.0)) == 0.0


def test_certainty_equivalent_definition_ratio():
    p = make_params()
    p0 = make_params(lookahead_delta=0.0)
    lhs = -math.log(primal_value(p) / primal_value(p0)) / p.alpha
    assert lhs == pytest.approx(certainty_equivalent(p), rel=1e-10)


def test_certainty_equivalent_mu_invariant_bitwise():
    values = {mu: certainty_equivalent(make_params(mu=mu))
              for mu in (-1.0, 0.0, 1.0)}
    assert values[-1.0] == values[0.0] == values[1.0]


def test_certainty_equivalent_monotonicities():
    ce = [certainty_equivalent(make_params(lookahead_delta=d))
          for d in np.linspace(0.1, 10.0, 12)]
    assert all(b > a for a, b in zip(ce, ce[1:]))
    ce_sigma = [certainty_equivalent(make_params(sigma=s))
                for s in (0.2, 0.3, 0.5, 0.9)]
    assert all(b > a for a, b in zip(ce_sigma, ce_sigma[1:]))
    ce_t = [certainty_equivalent(make_params(horizon_T=t))
            for t in (2.0, 5.0, 10.0, 20.0)]
    assert all(b > a for a, b in zip(ce_t, ce_t[1:]))


def test_certainty_equivalent_accrual_rate_bounded():
    # accrual per unit horizon increases with the window length toward
    # sqrt(rho)/2 (in risk-aversion-scaled units) and never exceeds it
    p = make_params()
    sr = math.sqrt(p.rho())
    bound = sr / 2.0
    deltas = (0.5, 1.0, 2.0, 5.0, 20.0)
    rates, targets = [], []
    for delta in deltas:
        hi = make_params(lookahead_delta=delta, horizon_T=100.0)
        lo = make_params(lookahead_delta=delta, horizon_T=99.0)
        rates.append(p.alpha * (certainty_equivalent(hi)
                                - certainty_equivalent(lo)))
        targets.append(delta * p.rho() / (2.0 * (1.0 + delta * sr)))
    assert all(b > a for a, b in zip(rates, rates[1:]))
    assert all(r < bound for r in rates)
    for rate, target in zip(rates, targets):
        assert rate == pytest.approx(target, rel=0.01)
    # the targets themselves climb toward the bound as the window widens
    assert all(b > a for a, b in zip(targets, targets[1:]))
    assert targets[-1] > 0.9 * bound


def test_primal_value_nonincreasing_in_impact_cost():
    values = [primal_value(make_params(lambda_impact=lam, phi0=1.0))
              for lam in (0.005, 0.01, 0.05, 0.2, 1.0)]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


def test_dual_value_trivial_cases():
    at_merton = make_params(phi0=make_params().merton_position(),
                            lookahead_delta=0.0)
    assert dual_value(at_merton) == 0.0
    p = make_params(lookahead_delta=0.0, phi0=1.0)
    red = p.reduce()
    sr = math.sqrt(p.rho())
    expected = -red.lambda_r * red.phi0_r ** 2 * sr \
        * math.tanh(sr * p.horizon_T) / 2.0
    assert dual_value(p) == pytest.approx(expected, rel=1e-14)


def test_duality_identity_random_parameters(rng):
    for _ in range(10):
        p = random_params(rng)
        lhs = -math.log(-primal_value(p)) / p.alpha
        assert lhs == pytest.approx(dual_value_mapped(p), rel=1e-10,
                                    abs=1e-10)
        assert abs(duality_gap(p)) < 1e-10 * max(1.0, abs(lhs))


def test_reduction_consistency_tight(rng):
    for _ in range(10):
        p = random_params(rng)
        red = p.reduce()
        direct = primal_value(p)
        via = math.exp(-red.entropy_shift) * primal_value(red.as_model_params())
        assert direct == pytest.approx(via, rel=1e-12)


# -- Monte Carlo --------------------------------------------------------------


def test_mc_idle_policy_is_exactly_minus_one():
    p = make_params(mu=0.0, phi0=0.0)
    est = mc_expected_utility("uninformed", p, 500, 50, seed=9)
    assert est.mean == -1.0
    assert est.std_error == 0.0
    assert est.n_clamped == 0


def test_mc_batching_and_workers_do_not_change_bits(reference_params):
    a = mc_expected_utility("informed", reference_params, 4000, 50, seed=31,
                            batch_size=512)
    b = mc_expected_utility("informed", reference_params, 4000, 50, seed=31,
                            batch_size=4000)
    assert a.mean == b.mean and a.std_error == b.std_error
    c = mc_expected_utility("informed", reference_params, 4000, 50, seed=31,
                            batch_size=512, workers=2)
    assert c.mean == a.mean and c.std_error == a.std_error


def test_mc_informed_beats_uninformed(reference_params):
    informed = mc_expected_utility("informed", reference_params, 20000, 100,
                                   seed=77)
    uninformed = mc_expected_utility("uninformed", reference_params, 20000,
                                     100, seed=77)
    assert informed.mean > uninformed.mean


def test_mc_clamping_flags_extreme_outliers():
    p = make_params(alpha=30.0, lambda_impact=1e-6, sigma=1.0)
    est = mc_expected_utility("naive_frontrun", p, 200, 100, seed=13)
    assert est.n_clamped > 0
    assert math.isfinite(est.mean)


# -- perturbations -------------------------------------------------------------


def test_perturbation_zero_epsilon_is_identity(reference_params):
    report = perturbation_test(reference_params, 2000, 50, seed=3,
                               eps_values=(0.0,), directions=("constant",))
    for entry in report.entries:
        assert entry["mean_diff"] == 0.0
        assert entry["se_diff"] == 0.0


def test_perturbation_constant_direction_closed_form_oracle():
    # mu=0, phi0=0, delta=0: optimum is idle; a constant rate c gives
    # E[-exp(-alpha V)] = -exp(alpha*lam*c^2*T/2 + alpha^2 c^2 var(X)/2)
    # with X = sum_k (S_T - S_k) dt Gaussian. Verified against MC.
    p = make_params(mu=0.0, phi0=0.0, lookahead_delta=0.0)
    n, n_paths, c = 50, 40000, 0.8
    dt = p.horizon_T / n
    var_x = p.sigma ** 2 * dt ** 3 \
        * float(np.sum((np.arange(n) + 1) ** 2))
    closed = -math.exp(p.alpha * p.lambda_impact * c * c * p.horizon_T / 2.0
                       + p.alpha ** 2 * c * c * var_x / 2.0)
    ens = market_sim.simulate(p, n_paths, n, seed=41)
    v = market_sim.pnl_batch(np.full((n_paths, n), c), ens.prices, p)
    u, _ = analytics.utilities_from_pnl(v, p.alpha)
    se = float(np.std(u, ddof=1)) / math.sqrt(n_paths)
    assert float(np.mean(u)) == pytest.approx(closed, abs=3.5 * se)
    assert closed < -1.0  # strictly worse than doing nothing


def test_perturbation_report_within_bounds(reference_params):
    report = perturbation_test(reference_params, 8000, 100, seed=19)
    assert len(report.entries) == 24
    assert len(report.pair_entries) == 12
    assert report.all_within_3sigma()
    # degradation is real: at the largest eps the mean loss is significant
    big = [e for e in report.entries if abs(e["eps"]) == 0.1]
    assert all(e["mean_diff"] < 0.0 for e in big)


# -- report --------------------------------------------------------------------


def test_value_report_structure(reference_params):
    report = value_report(reference_params, 4000, 100, seed=8)
    payload = report.to_dict()
    assert payload["primal_closed_form"] < 0.0
    assert payload["certainty_equivalent"] > 0.0
    assert payload["mc_estimate"]["n_samples"] == 4000
    assert math.isfinite(payload["mc_gap_in_sigmas"])
    json.dumps(payload)


def test_value_report_against_schema(reference_params):
    jsonschema = pytest.importorskip("jsonschema")
    from importlib import resources
    schema = json.loads(resources.files("lookahead_trader.schemas")
                        .joinpath("value_report.schema.json").read_text())
    report = value_report(reference_params, 1000, 50, seed=8)
    jsonschema.validate(report.to_dict(), schema)

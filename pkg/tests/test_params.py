import math

import numpy as np
import pytest

from lookahead_trader.params import ModelParams, rho

from conftest import make_params


def test_rho_reference_values():
    assert make_params(alpha=0.03, sigma=0.3, lambda_impact=0.01).rho() \
        == pytest.approx(0.27, rel=1e-12)
    assert ModelParams(alpha=1, sigma=1, lambda_impact=1, horizon_T=1).rho() == 1.0
    assert ModelParams(alpha=2, sigma=1, lambda_impact=2, horizon_T=1).rho() == 1.0


def test_rho_function_matches_method(reference_params):
    assert rho(reference_params) == reference_params.rho()


@pytest.mark.parametrize("field,value", [
    ("sigma", 0.0), ("sigma", -1.0), ("lambda_impact", 0.0),
    ("alpha", -0.1), ("horizon_T", 0.0), ("lookahead_delta", -0.5),
])
def test_validation_rejects_bad_values(field, value):
    with pytest.raises(ValueError):
        make_params(**{field: value})


def test_reduce_reference_example():
    p = make_params(alpha=0.03, sigma=0.3, lambda_impact=0.01, mu=0.1,
                    phi0=0.0)
    r = p.reduce()
    assert r.alpha_r == pytest.approx(0.009, rel=1e-12)
    assert r.lambda_r == pytest.approx(0.01 / 0.3, rel=1e-12)
    assert r.mu_r == pytest.approx(0.1 / 0.3, rel=1e-12)
    assert r.phi0_r == pytest.approx(-1000.0 / 27.0, rel=1e-12)
    assert r.entropy_shift == pytest.approx(0.5 * (0.1 / 0.3) ** 2 * 10.0,
                                            rel=1e-12)


def test_reduce_trivial_cases():
    p = make_params(mu=0.0, sigma=1.0, phi0=1.7)
    r = p.reduce()
    assert r.phi0_r == 1.7
    assert r.mu_r == 0.0
    assert r.entropy_shift == 0.0

    p = make_params(mu=0.1)
    merton = p.merton_position()
    assert make_params(mu=0.1, phi0=merton).reduce().phi0_r == 0.0


def test_rho_preserved_exactly(rng):
    for _ in range(50):
        p = make_params(alpha=rng.uniform(0.01, 3), sigma=rng.uniform(0.05, 3),
                        lambda_impact=rng.uniform(0.01, 3))
        assert p.reduce().rho() == p.rho()


def test_reduce_unreduce_roundtrip(rng):
    for _ in range(50):
        p = ModelParams(
            s0=rng.uniform(-5, 5), mu=rng.uniform(-1, 1),
            sigma=rng.uniform(0.05, 3), lambda_impact=rng.uniform(0.01, 3),
            alpha=rng.uniform(0.01, 3), horizon_T=rng.uniform(0.1, 20),
            lookahead_delta=rng.uniform(0, 25), phi0=rng.uniform(-10, 10))
        q = p.reduce().unreduce()
        for name in ("s0", "mu", "sigma", "lambda_impact", "alpha",
                     "horizon_T", "lookahead_delta", "phi0"):
            a, b = getattr(p, name), getattr(q, name)
            assert a == pytest.approx(b, rel=1e-14, abs=1e-14), name


def test_json_round_trip(tmp_path):
    p = make_params(phi0=2.5)
    path = tmp_path / "params.json"
    path.write_text(__import__("json").dumps(p.to_dict()))
    assert ModelParams.from_json_file(str(path)) == p


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown"):
        ModelParams.from_dict({"sigma": 1.0, "bogus": 3})


def test_delta_beyond_horizon_is_allowed():
    p = make_params(lookahead_delta=50.0)
    assert p.lookahead_delta == 50.0
    assert math.isfinite(p.rho())

import numpy as np
import pytest

from lookahead_trader.params import ModelParams, REFERENCE_PARAMS


@pytest.fixture
def reference_params() -> ModelParams:
    return REFERENCE_PARAMS


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def make_params(**overrides) -> ModelParams:
    return ModelParams(**{**REFERENCE_PARAMS.to_dict(), **overrides})

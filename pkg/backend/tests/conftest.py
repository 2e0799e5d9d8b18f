"""
Shared fixtures: seeded streams, small random models and hand-built priors
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from ride.services.mcgsm import McgsmParams  # noqa: E402
from ride.services.ride_model import RideModel, init_model  # noqa: E402
from ride.services.slstm import CausalWindow, init_slstm  # noqa: E402
from ride.utils.numeric import make_rng  # noqa: E402


def constant_mcgsm(hidden_dim: int, log_precision: float, components: int = 1, scales: int = 1) -> McgsmParams:
    """Context-free MCGSM: every expert is N(0, exp(-log_precision)) and the gate is uniform."""
    return McgsmParams(
        gate_bias=np.zeros((components, scales)),
        log_precision=np.full((components, scales), float(log_precision)),
        quad_factors=np.zeros((components, hidden_dim, hidden_dim)),
        predictors=np.zeros((components, hidden_dim)),
    )


def context_free_model(log_precision: float, hidden_dim: int = 3, seed: int = 0) -> RideModel:
    window = CausalWindow()
    slstm_params = init_slstm(window.size, make_rng(seed), hidden_dim=hidden_dim)
    return RideModel(slstm_params, constant_mcgsm(hidden_dim, log_precision), window).validate()


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def small_model():
    """C=3, S=2, H_d=4 random model"""
    return init_model(make_rng(7), num_components=3, num_scales=2, hidden_dim=4)


@pytest.fixture
def unit_gaussian_model():
    """Every pixel i.i.d. N(0, 1) regardless of context"""
    return context_free_model(0.0)


@pytest.fixture
def flat_model():
    """Variance e^30: the prior gradient is numerically negligible"""
    return context_free_model(-30.0)


@pytest.fixture
def image_6x6():
    return make_rng(99).generator.uniform(0.0, 1.0, size=(6, 6))

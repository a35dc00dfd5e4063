import numpy as np
import pytest

from afdmsim.channel import SparsityModel
from afdmsim.daft import AfdmParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_model():
    return SparsityModel("type1", L=4, Q=2, p_d=0.5, p_D=0.4)


@pytest.fixture
def small_params():
    return AfdmParams(N=256, P=1, L_cpp=3)


def random_frame(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

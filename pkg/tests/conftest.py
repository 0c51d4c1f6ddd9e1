import numpy as np
import pytest

from mppi_lab.problem import CostModel, DynamicsModel, OcpInstance, constant_matrix
from mppi_lab.sampling import CovarianceSpec
from mppi_lab.scenarios import get_scenario

ONE = constant_matrix(1.0)


def linear_instance(x0=0.0, horizon=2, R=1.0, terminal=None, state_cost=None, lam=1.0, sigma=1.0):
    """``x+ = x + u + w`` with configurable costs."""
    dyn = DynamicsModel.input_affine(1, 1, 1, lambda x: x, ONE, ONE)
    E = terminal or (lambda x: 0.0 * x[..., 0])
    return OcpInstance(
        dyn, CostModel(E, R, state_cost), horizon, [x0], CovarianceSpec.isotropic(sigma, 1, horizon), lam
    )


@pytest.fixture
def quartic():
    return get_scenario("quartic").build_instance()


@pytest.fixture
def arctan2():
    return get_scenario("arctan2").build_instance()


@pytest.fixture
def affine2():
    return get_scenario("affine2").build_instance()


@pytest.fixture
def lq1():
    return get_scenario("lq1").build_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

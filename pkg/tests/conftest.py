import numpy as np
import pytest

from riskhjb.model import CostSpec, Problem, RectAnnulus, SdeModel, constant, quadratic


def planar_model(sigma=0.1, k=0.5):
    return SdeModel.linear(-k * np.eye(2), np.eye(2), sigma * np.eye(2))


def planar_problem(eta=0.13, sigma=0.1, safe=None, terminal=None, running=None, T=2.0):
    safe = safe or RectAnnulus([-0.5, -0.5], [0.5, 0.5], [0.1, 0.1], [0.2, 0.2])
    cost = CostSpec.scalar_weight(2, 1.0, terminal or quadratic(1.0), running or quadratic(1.0),
                                  eta)
    return Problem(planar_model(sigma), safe, cost, 0.0, T)


def trivial_problem(safe=None):
    """V = psi = 0 and eta = 0: the value function vanishes identically."""
    return planar_problem(eta=0.0, safe=safe, terminal=constant(0.0), running=constant(0.0))


@pytest.fixture
def box():
    return RectAnnulus([-0.5, -0.5], [0.5, 0.5])


@pytest.fixture
def annulus():
    return RectAnnulus([-0.5, -0.5], [0.5, 0.5], [0.1, 0.1], [0.2, 0.2])

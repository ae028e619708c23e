import numpy as np
import pytest

from condemp import build_analytic_basis, unit_interval
from condemp.domains import NEUMANN


@pytest.fixture(scope="session")
def dirichlet_basis_64():
    return build_analytic_basis(unit_interval(), 64)


@pytest.fixture(scope="session")
def dirichlet_basis_128():
    return build_analytic_basis(unit_interval(), 128)


@pytest.fixture(scope="session")
def neumann_basis_64():
    return build_analytic_basis(unit_interval(boundary=NEUMANN), 64)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from artifact.model import ModelParams, PotentialModel


@pytest.fixture(scope="session")
def params2d():
    return ModelParams(n=2, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=1e-3)


@pytest.fixture(scope="session")
def params1d():
    return ModelParams(n=1, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=1e-3)


@pytest.fixture(scope="session")
def radial2d():
    return PotentialModel.radial(2)


@pytest.fixture(scope="session")
def radial1d():
    return PotentialModel.radial(1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260817)

import numpy as np
import pytest

from preforge.mespec import load_catalog
from preforge.model import vectorize


@pytest.fixture(scope="session")
def rf_me():
    return load_catalog("resonance_fluorescence", {"gamma": 1.0, "Omega": 0.18})


@pytest.fixture(scope="session")
def rf_bm(rf_me):
    return vectorize(rf_me)


@pytest.fixture(scope="session")
def rf_me_fast():
    """Complex-eigenvalue regime (gamma^2 < 16 Omega^2)."""
    return load_catalog("resonance_fluorescence", {"gamma": 1.0, "Omega": 0.5})


@pytest.fixture(scope="session")
def rf_bm_fast(rf_me_fast):
    return vectorize(rf_me_fast)


@pytest.fixture(scope="session")
def ae_me():
    return load_catalog("absorption_emission", {"gamma_minus": 1.0, "gamma_plus": 0.3})


@pytest.fixture(scope="session")
def ae_bm(ae_me):
    return vectorize(ae_me)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)

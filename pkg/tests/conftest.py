from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aclab.features import m2_features, make_centered_basis
from aclab.mdp import ergodic_garnet, m2

settings.register_profile("aclab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("aclab")


@pytest.fixture
def m2_mdp():
    return m2()


@pytest.fixture
def m2_map():
    return m2_features()


@pytest.fixture(scope="session")
def garnet5():
    mdp, _ = ergodic_garnet(5, 3, 3, 0)
    return mdp


@pytest.fixture(scope="session")
def garnet5_map():
    return make_centered_basis(5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from blochfga.potentials import make_lattice


@pytest.fixture(scope="session")
def cos_lattice():
    return make_lattice("cosine")


@pytest.fixture(scope="session")
def bump_lattice():
    return make_lattice("gaussian-bump", {"alpha": 25.0})


@pytest.fixture(scope="session")
def free_lattice():
    return make_lattice("zero")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

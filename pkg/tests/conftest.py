import numpy as np
import pytest

from raseg.phantom import PhantomSpec, generate_cohort, generate_phantom


@pytest.fixture(scope="session")
def small_spec():
    return PhantomSpec(seed=0, shape=(8, 64, 64), noise_std=10.0, deformation_px=1.5)


@pytest.fixture(scope="session")
def small_cohort(small_spec):
    """Four tiny subjects for fast pipeline tests."""
    return generate_cohort(4, small_spec)


@pytest.fixture(scope="session")
def phantom_volume():
    return generate_phantom(PhantomSpec(seed=3))


@pytest.fixture(scope="session")
def full_cohort():
    """The desk-scale 7-subject cohort used by the acceptance suite."""
    return generate_cohort(7)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)

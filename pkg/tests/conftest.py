import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_hermitian(rng, d, scale=1.0):
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (m + m.conj().T) / 2


def random_density(rng, d):
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = m @ m.conj().T
    return r / np.trace(r)


def random_bath(rng, n_max=1.5):
    from cavityfb.fock import BathParams

    N = float(rng.uniform(0, n_max))
    r = float(rng.uniform(0, 1)) * np.sqrt(N * (N + 1))
    return BathParams(N, r * np.exp(1j * rng.uniform(0, 2 * np.pi)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

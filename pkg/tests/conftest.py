import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nudging3d.spectral import DomainSpec, SpectralVelocity, random_divfree_field

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

TWO_PI = 2.0 * np.pi


@pytest.fixture
def d8():
    return DomainSpec(L=TWO_PI, N=8, nu=1.0)


@pytest.fixture
def d16():
    return DomainSpec(L=TWO_PI, N=16, nu=1.0)


def shear_mode(domain, amplitude=1.0, m=1):
    """u = (a sin(m kappa y), 0, 0); a steady Euler solution (B(u, u) = 0)."""
    c = np.zeros((3,) + domain.shape, complex)
    c[0, 0, m % domain.N, 0] = -0.5j * amplitude
    c[0, 0, -m % domain.N, 0] = 0.5j * amplitude
    return SpectralVelocity(c, domain)


def rand_field(domain, seed, **kw):
    return random_divfree_field(domain, seed, **kw)

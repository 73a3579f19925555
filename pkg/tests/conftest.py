import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riemsde.geometry import Hyperboloid, Sphere

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=["sphere", "hyperboloid"])
def curved(request):
    return Sphere(2) if request.param == "sphere" else Hyperboloid(2)


def random_tangent(manifold, x, rng, scale=1.0):
    """Tangent at ``x`` with frame coordinates drawn from ``N(0, scale^2 I)``."""
    E = manifold.frame(x)
    return manifold.from_coords(E, scale * rng.standard_normal(np.shape(x)[:-1] + (manifold.dim,)))


def random_point(manifold, rng, spread=1.0):
    o = manifold.origin()
    return manifold.exp(o, random_tangent(manifold, o, rng, spread))

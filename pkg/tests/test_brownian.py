import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemsde.brownian import BrownianPath, NoiseModel, replica_rng, sample_noise
from riemsde.geometry import Sphere


@given(st.integers(0, 2 ** 32), st.integers(1, 7))
def test_children_sum_to_parent_exactly(seed, depth):
    p = BrownianPath.generate(0.5, depth, 2, seed)
    for i in range(depth):
        fine = p.level(i + 1)
        assert np.array_equal(p.level(i), fine[0::2] + fine[1::2])


def test_increment_variance():
    p = BrownianPath.generate(2.0, 10, 3, 11, replicas=range(200))
    inc = p.level(10)
    var = inc.var()
    se = math.sqrt(2 / inc.size) * p.delta(10)
    assert abs(var - p.delta(10)) < 4 * se


def test_same_seed_bitwise_equal_and_replicas_independent_of_batch():
    a = BrownianPath.generate(1.0, 5, 2, 42, replicas=[3, 4])
    b = BrownianPath.generate(1.0, 5, 2, 42, replicas=[4])
    assert np.array_equal(a.level(5)[1], b.level(5)[0])
    c = BrownianPath.generate(1.0, 5, 2, 42)
    d = BrownianPath.generate(1.0, 5, 2, 42)
    assert np.array_equal(c.values(5), d.values(5))


def test_values_and_index_errors():
    p = BrownianPath.generate(1.0, 3, 2, 0)
    v = p.values(3)
    assert np.array_equal(v[0], np.zeros(2))
    assert np.allclose(v[-1], p.level(0)[0])
    with pytest.raises(IndexError):
        p.level(4)
    with pytest.raises(IndexError):
        p.sample_increment(2, 4)
    assert np.array_equal(p.sample_increment(2, 1), p.level(2)[1])


@pytest.mark.parametrize("kind", ["gaussian", "rademacher", "scaled-sphere"])
def test_noise_moments(kind):
    m = NoiseModel(kind, 3)
    x = m.draw(replica_rng(1, 0), (40_000,))
    n = len(x)
    assert np.all(np.abs(x.mean(0)) < 4 / math.sqrt(n))
    cov = np.cov(x.T)
    assert np.max(np.abs(cov - np.eye(3))) < 6 / math.sqrt(n)
    if kind != "gaussian":
        assert np.allclose(np.linalg.norm(x, axis=-1), math.sqrt(3))
        assert m.bound == math.sqrt(3)
    else:
        assert m.bound == math.inf


def test_rotation_field_keeps_covariance_and_norm():
    m = NoiseModel("rademacher", 2, theta0=0.8)
    rng = replica_rng(2, 0)
    x = np.array([0.3, -0.2, 0.9])
    c = m.draw(rng, (20_000,))
    r = m.rotate(np.broadcast_to(x, (20_000, 3)), c)
    assert np.allclose(np.linalg.norm(r, axis=-1), np.linalg.norm(c, axis=-1))
    assert np.max(np.abs(np.cov(r.T) - np.eye(2))) < 0.05
    assert not np.allclose(r, c)


def test_sample_noise_is_tangent():
    S = Sphere(2)
    x = S.origin()
    v = sample_noise(NoiseModel("gaussian", 2), x, S.frame(x), replica_rng(0, 0))
    S.check_tangent(x, v)


def test_unknown_noise_kind():
    with pytest.raises(ValueError):
        NoiseModel("cauchy", 2)

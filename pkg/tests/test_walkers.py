import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemsde import walkers
from riemsde.brownian import BrownianPath, NoiseModel, replica_rng
from riemsde.geometry import Euclidean, Hyperboloid, Sphere


def _flat_setup(b=(0.3, -0.4)):
    M = Euclidean(2)
    return M, np.array([1.0, -2.0]), np.eye(2), walkers.constant_drift(b)


@given(st.integers(0, 2 ** 31), st.integers(0, 6))
def test_flat_constant_drift_endpoint_exact(seed, level):
    M, x0, E0, beta = _flat_setup()
    path = BrownianPath.generate(0.8, 6, 2, seed)
    tr = walkers.euler_murayama(M, x0, E0, beta, path, level)
    expect = x0 + 0.8 * np.array([0.3, -0.4]) + path.values(0)[-1]
    assert np.allclose(tr.endpoint, expect, atol=1e-13)
    assert tr.points.shape == (2 ** level + 1, 2)
    assert np.all(np.diff(tr.times) > 0)


def test_zero_variance_path_is_constant():
    S = Sphere(2)
    x0 = S.origin()
    path = BrownianPath(1.0, 3, np.zeros((8, 2)))
    tr = walkers.euler_murayama(S, x0, S.frame(x0), walkers.zero_drift(), path, 3)
    assert np.allclose(tr.points, x0)


def test_flat_frozen_interpolant_matches_across_levels():
    M, x0, E0, beta = _flat_setup()
    path = BrownianPath.generate(0.5, 6, 2, 3, replicas=range(4))
    res = walkers.dyadic_levels(M, x0, E0, beta, path, interpolant="frozen")
    assert np.max(res.sup_d2) < 1e-26


def test_flat_scaled_interpolant_oracle():
    # with zero drift the scaled midpoint misses the finer node by half the first fine increment
    M, x0, E0, _ = _flat_setup()
    path = BrownianPath.generate(0.5, 5, 2, 8)
    res = walkers.dyadic_levels(M, x0, E0, walkers.zero_drift(), path)
    for i in range(5):
        half = path.level(i + 1)[0::2]
        expect = np.max(np.sum((0.5 * half) ** 2, axis=-1))
        assert math.isclose(res.sup_d2[i], expect, rel_tol=1e-9)


def test_unknown_interpolant():
    M, x0, E0, beta = _flat_setup()
    with pytest.raises(ValueError):
        walkers.dyadic_levels(M, x0, E0, beta, BrownianPath.generate(1, 2, 2, 0), interpolant="cubic")


@pytest.mark.parametrize("M", [Sphere(2), Hyperboloid(2)])
def test_frame_coupling_rule(M):
    x0 = M.exp(M.origin(), M.frame(M.origin())[0] * 0.3)
    beta = walkers.log_drift(M, M.origin(), 1.0)
    path = BrownianPath.generate(0.5, 4, 2, 17)
    res = walkers.dyadic_levels(M, x0, M.frame(x0), beta, path, record=(2, 3), compare=False)
    coarse, fine = res.trajectories[2], res.trajectories[3]
    for k in range(1, 5):
        F = M.transported_frame(coarse.frames[k], coarse.points[k], fine.points[2 * k])
        assert np.allclose(fine.frames[2 * k], F, atol=1e-12)
    for k in range(1, 9, 2):
        F = M.transported_frame(fine.frames[k - 1], fine.points[k - 1], fine.points[k])
        assert np.allclose(fine.frames[k], F, atol=1e-12)
    for tr in (coarse, fine):
        M.check_frame(tr.points, tr.frames)


def test_refine_pair_and_euler_agree_with_dyadic():
    S = Sphere(2)
    x0 = S.exp(S.origin(), np.array([0.4, 0.0, 0.0]))
    beta = walkers.log_drift(S, S.origin(), 1.0)
    path = BrownianPath.generate(0.25, 5, 2, 1)
    a, b = walkers.refine_pair(S, x0, S.frame(x0), beta, path, 3)
    res = walkers.dyadic_levels(S, x0, S.frame(x0), beta, path, compare=False)
    assert np.allclose(a.endpoint, res.endpoints[3]) and np.allclose(b.endpoint, res.endpoints[4])
    assert a.level == 3 and b.level == 4


def test_refinement_gap_shrinks_on_sphere():
    S = Sphere(2)
    x0 = S.exp(S.origin(), np.array([0.5, 0.0, 0.0]))
    beta = walkers.log_drift(S, S.origin(), 1.0)
    path = BrownianPath.generate(0.25, 8, 2, 5, replicas=range(200))
    res = walkers.dyadic_levels(S, x0, S.frame(x0), beta, path)
    means = res.sup_d2.mean(axis=-1)
    assert means[7] < 0.25 * means[2]
    assert not res.aborted.any()


def test_log_drift_vanishes_at_target_and_attracts():
    for M in (Sphere(2), Hyperboloid(2)):
        o = M.origin()
        beta = walkers.log_drift(M, o, 2.0)
        assert np.allclose(beta(o), 0)
        x = M.exp(o, 0.5 * M.frame(o)[1])
        y = M.exp(x, 1e-3 * beta(x))
        assert M.distance(y, o) < M.distance(x, o)
        assert beta.L_beta_prime >= 2.0


def test_nongaussian_flat_is_a_sum():
    M, y0, _, beta = _flat_setup()
    noise = NoiseModel("rademacher", 2)
    eta = noise.draw(replica_rng(0, 0), (30,))
    tr = walkers.nongaussian_walk(M, y0, beta, noise, 0.01, 30, eta=eta, E0=np.eye(2))
    expect = y0 + 0.3 * np.array([0.3, -0.4]) + 0.1 * eta.sum(0)
    assert np.allclose(tr.endpoint, expect, atol=1e-13)


@pytest.mark.parametrize("M", [Sphere(2), Hyperboloid(2)])
def test_nongaussian_stays_on_manifold(M):
    noise = NoiseModel("scaled-sphere", 2)
    beta = walkers.log_drift(M, M.origin(), 1.0)
    tr = walkers.nongaussian_walk(M, M.origin(), beta, noise, 0.01, 50, rng=replica_rng(1, 0))
    M.check_point(tr.points)
    M.check_frame(tr.points, tr.frames)


def test_tangent_walk_radial_frame_is_an_exact_sum():
    S = Sphere(2)
    y0 = S.exp(S.origin(), np.array([0.3, 0.2, 0.0]) - 0.0)
    y0 = S.project(y0)
    E0 = S.frame(y0)
    beta = walkers.log_drift(S, S.origin(), 1.0)
    noise = NoiseModel("rademacher", 2)
    eta = noise.draw(replica_rng(4, 0), (5, 40))
    z, tr = walkers.tangent_walk(S, y0, E0, beta, noise, 1e-3, 40, eta=eta)
    c = S.coords(np.broadcast_to(y0, (5, 3)), np.broadcast_to(E0, (5, 2, 3)), z[:, -1])
    expect = 40e-3 * S.coords(y0, E0, beta(y0)) + math.sqrt(1e-3) * eta.sum(1)
    assert np.allclose(c, expect, atol=1e-12)
    assert np.allclose(tr.points[:, -1], S.exp(np.broadcast_to(y0, (5, 3)), z[:, -1]))


def test_tangent_walk_partner_flat_matches_walk_with_frozen_drift():
    M, y0, _, beta = _flat_setup()
    noise = NoiseModel("gaussian", 2)
    eta = noise.draw(replica_rng(5, 0), (10,))
    y = walkers.nongaussian_walk(M, y0, beta, noise, 0.05, 10, eta=eta, E0=np.eye(2))
    z, tr = walkers.tangent_walk(M, y0, np.eye(2), beta, noise, 0.05, 10, eta=eta, partner=y)
    assert np.allclose(tr.endpoint, y.endpoint, atol=1e-13)

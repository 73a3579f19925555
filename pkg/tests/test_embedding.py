import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemsde import diagnostics, embedding as emb


def _wavy_metric():
    """Non-diagonal metric with ``dg`` by central differences of ``inv(A)``."""

    def A(x):
        x = np.asarray(x, float)
        a = 1.5 + 0.4 * np.sin(x[..., 0])
        b = 0.3 * np.cos(x[..., 1])
        c = 1.2 + 0.2 * np.sin(x[..., 0] + x[..., 1])
        return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)

    def dg(x, h=1e-5):
        x = np.asarray(x, float)
        out = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out.append((np.linalg.inv(A(x + e)) - np.linalg.inv(A(x - e))) / (2 * h))
        return np.stack(out, -3)

    return emb.MetricField(2, A, dg, 0.5, 2.5, None, "wavy")


def test_christoffel_against_index_loop():
    metric = _wavy_metric()
    x = np.array([0.4, -0.9])
    A, dg = metric.A(x), metric.dg(x)
    G = emb.christoffel(metric, x).Gamma
    for k in range(2):
        for i in range(2):
            for j in range(2):
                ref = 0.5 * sum(A[k, l] * (dg[i, j, l] + dg[j, i, l] - dg[l, i, j]) for l in range(2))
                assert math.isclose(G[k, i, j], ref, abs_tol=1e-12)
    assert np.allclose(G, np.swapaxes(G, -1, -2))


@given(st.floats(-1.5, 1.5), st.floats(-2, 2), st.floats(0.2, 2.0))
def test_diagonal_exponential_closed_form(x1, x2, s):
    metric = emb.diagonal_exponential_metric(2, s)
    cd = emb.christoffel(metric, np.array([x1, x2]))
    expect = np.zeros((2, 2, 2))
    expect[0, 0, 0] = -s / 2
    assert np.allclose(cd.Gamma, expect, atol=1e-14)
    assert np.allclose(cd.phi, [-s / 2 * math.exp(s * x1), 0.0])


def test_identity_metric_is_flat():
    metric = emb.identity_metric(3)
    x, v = np.array([0.1, 0.2, 0.3]), np.array([1.0, -2.0, 0.5])
    assert np.allclose(emb.pullback_exp(metric, x, v), x + v)
    xi = np.array([0.3, 0.1, -0.4])
    xp, xe, (r1, r2) = emb.corrected_step(metric, x, np.zeros(3), xi, 0.1)
    assert r1 < 1e-14 and r2 < 1e-14
    eta = np.random.default_rng(0).standard_normal((4, 7, 3))
    xs, zs = emb.euclidean_walk_pair(metric, x, np.ones(3), 0.05, 7, eta)
    assert np.allclose(xs, zs)


@pytest.mark.parametrize("metric", [emb.diagonal_exponential_metric(2), _wavy_metric()])
def test_geodesic_preserves_speed(metric):
    x, v = np.array([0.3, -0.2]), np.array([0.6, 0.4])
    s0, s1 = emb.geodesic_speed(metric, x, v, h=1e-3)
    assert math.isclose(s0, s1, rel_tol=1e-8)


def test_diagonal_exponential_geodesic_closed_form():
    # x1'' = x1'^2 / 2 with x1(0) = 0, x1'(0) = w: x1(t) = -2 log(1 - w t / 2)
    metric = emb.diagonal_exponential_metric(2, 1.0)
    w = 0.8
    y = emb.pullback_exp(metric, np.zeros(2), np.array([w, 0.3]), h=1e-3)
    assert math.isclose(y[0], -2 * math.log(1 - w / 2), rel_tol=1e-10)
    assert math.isclose(y[1], 0.3, rel_tol=1e-12)


def test_blowup_raises_or_marks_nan():
    metric = emb.diagonal_exponential_metric(2, 1.0)
    with pytest.raises(Exception):
        with np.errstate(all="ignore"):
            emb.pullback_exp(metric, np.zeros(2), np.array([3.0, 0.0]), h=1e-2)
    with np.errstate(all="ignore"):
        y = emb.pullback_exp(metric, np.zeros(2), np.array([3.0, 0.0]), h=1e-2, strict=False)
    assert not np.all(np.isfinite(y))


@pytest.mark.parametrize("metric", [emb.diagonal_exponential_metric(2), _wavy_metric(),
                                    emb.diagonal_exponential_metric(3, 0.5)])
def test_laplace_beltrami_sign(metric):
    d = metric.dim
    f = emb.ScalarField(lambda x: np.sin(x[..., 0]) + x[..., -1] ** 2 * x[..., 0],
                        lambda x: np.stack([np.cos(x[..., 0]) + x[..., -1] ** 2]
                                           + [np.zeros_like(x[..., 0])] * (d - 2)
                                           + [2 * x[..., -1] * x[..., 0]], -1) if d > 1 else None,
                        None)

    def hess(x):
        H = np.zeros(x.shape[:-1] + (d, d))
        H[..., 0, 0] = -np.sin(x[..., 0])
        H[..., 0, -1] = H[..., -1, 0] = 2 * x[..., -1]
        H[..., -1, -1] = 2 * x[..., 0]
        return H

    f = emb.ScalarField(f.value, f.grad, hess)
    x = np.array([0.5, -0.3, 0.2][:d])
    assert emb.laplace_beltrami_identity(metric, f, x, -1.0) < 1e-6
    assert emb.laplace_beltrami_identity(metric, f, x, +1.0) > 1e-2


def test_corrected_step_residual_rates():
    metric = emb.diagonal_exponential_metric(2)
    x = np.array([0.5, -0.3])
    eta = np.random.default_rng(1).standard_normal((400, 2))
    xi = np.einsum("...ij,...j->...i", metric.sqrt_A(np.broadcast_to(x, eta.shape)), eta)
    pts1, pts2 = [], []
    for d in (0.1, 0.05, 0.025, 0.0125):
        _, _, (r1, r2) = emb.corrected_step(metric, np.broadcast_to(x, eta.shape), np.array([0.1, -0.2]), xi, d)
        pts1.append((d, r1.mean()))
        pts2.append((d, r2.mean()))
    assert diagnostics.fit_rate(pts1).slope >= 0.9
    assert diagnostics.fit_rate(pts2).slope >= 1.4


def test_sqrt_A_and_check():
    metric = _wavy_metric()
    x = np.array([[0.1, 0.2], [1.0, -1.0]])
    S = metric.sqrt_A(x)
    assert np.allclose(S @ S, metric.A(x))
    metric.check(x)
    bad = emb.MetricField(2, lambda x: np.array([[1.0, 0.5], [0.0, 1.0]]), None, 0.5, 2.0)
    with pytest.raises(ValueError):
        bad.check(np.zeros(2))


def test_chart_sde_drift_and_flat_sde_sum():
    metric = emb.diagonal_exponential_metric(2)
    drift, diff = emb.chart_sde_coefficients(metric, np.array([0.2, 0.0]))
    x = np.array([0.3, 0.0])
    assert np.allclose(drift(x), [0.2 + 0.25 * math.exp(0.3), 0.0])
    dW = np.random.default_rng(2).standard_normal((5, 2)) * 0.1
    z = emb.euclidean_sde(lambda y: np.ones_like(y), lambda y: np.eye(2), np.zeros(2), 0.1, dW)
    assert np.allclose(z[-1], 0.5 + dW.sum(0))


def test_perturbation_divergence_bound_and_scaling():
    # dy = -y dt + dW  against  dy = (-y + e_u) dt + (I + e_F P) dW
    rng = np.random.default_rng(3)
    T, dt, n = 1.0, 0.01, 4000
    K = int(T / dt)
    dW = rng.standard_normal((n, K, 2)) * math.sqrt(dt)
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    gaps = []
    for eps in (0.05, 0.1):
        y0 = emb.euclidean_sde(lambda y: -y, lambda y: np.eye(2), np.zeros(2), dt, dW)
        y1 = emb.euclidean_sde(lambda y: -y + eps / math.sqrt(2), lambda y: np.eye(2) + eps * P,
                               np.zeros(2), dt, dW)
        gap = np.mean(np.sum((y0[:, -1] - y1[:, -1]) ** 2, -1))
        assert gap <= emb.perturbation_bound(T, 1.0, 0.0, eps, eps, 0.0)
        gaps.append(gap)
    assert 3.5 < gaps[1] / gaps[0] < 4.5


def test_analytic_metric_derivative_against_differences():
    metric = emb.diagonal_exponential_metric(3, 0.7)
    x, h = np.array([0.4, -0.2, 0.9]), 1e-5
    fd = np.stack([(metric.g(x + h * e) - metric.g(x - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.max(np.abs(fd - metric.dg(x))) < 1e-6

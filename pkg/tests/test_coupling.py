import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from riemsde import coupling, walkers
from riemsde.geometry import Euclidean, Hyperboloid, Sphere

from conftest import random_point, random_tangent


# ---------------------------------------------------------------- synchronous

def test_flat_sync_same_drift_keeps_distance():
    M = Euclidean(2)
    beta = walkers.constant_drift([0.2, 0.1])
    x, y = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    xn, _, yn = coupling.synchronous_step(M, x, np.eye(2), y, beta, 0.1, np.array([0.3, -1.0]))
    assert math.isclose(M.distance(xn, yn), M.distance(x, y), rel_tol=1e-14)


def test_flat_sync_linear_drift_contracts_exactly():
    M = Euclidean(3)
    m, delta = 0.7, 0.05
    beta = walkers.DriftField(lambda x: -m * x)
    x, y = np.array([0.5, 0.0, 1.0]), np.array([-1.0, 2.0, 0.0])
    d0 = M.distance(x, y)
    xn, _, yn = coupling.synchronous_step(M, x, np.eye(3), y, beta, delta, np.ones(3))
    assert math.isclose(M.distance(xn, yn), (1 - delta * m) * d0, rel_tol=1e-13)


@pytest.mark.parametrize("M", [Sphere(2), Hyperboloid(2)])
@given(seed=st.integers(0, 100_000))
def test_synchronous_step_inequality(M, seed):
    rng = np.random.default_rng(seed)
    c = M.bounds().C_r
    x = random_point(M, rng, 0.3)
    y = M.exp(x, random_tangent(M, x, rng, c / 2))
    u = random_tangent(M, x, rng, c / 2)
    v = random_tangent(M, y, rng, c / 2)
    lhs, rhs = coupling.synchronous_bound(M, x, y, u, v)
    assert lhs <= rhs + 1e-15


# ---------------------------------------------------------------- reflection

def _pair(M, rng, d=0.4):
    x = random_point(M, rng, 0.3)
    y = M.exp(x, random_tangent(M, x, rng, d))
    return x, M.frame(x), y, M.frame(y)


@pytest.mark.parametrize("M", [Sphere(2), Hyperboloid(3), Sphere(3)])
def test_reflection_matrix_orthogonal(M):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, Ex, y, Ey = _pair(M, rng)
        R = coupling.reflection_matrix(M, x, Ex, y, Ey, 1e-6)
        assert np.max(np.abs(R @ R.T - np.eye(M.dim))) < 1e-8


@pytest.mark.parametrize("M", [Sphere(2), Hyperboloid(2), Sphere(3)])
def test_reflection_vector_and_matrix_routes_agree(M):
    rng = np.random.default_rng(1)
    zero = walkers.zero_drift()
    for _ in range(20):
        x, Ex, y, Ey = _pair(M, rng)
        eta = rng.standard_normal(M.dim)
        delta = 0.01
        _, _, yn, _, far = coupling.reflection_step(M, x, Ex, y, Ey, zero, delta, eta)
        assert far
        got = M.coords(y, Ey, M.log(y, yn)) / math.sqrt(delta)
        R = coupling.reflection_matrix(M, x, Ex, y, Ey, coupling.default_eps_reflect(delta, M.dim))
        assert np.allclose(got, R @ eta, atol=1e-9)


def test_reflection_flips_the_connecting_component():
    S = Sphere(2)
    x = S.origin()
    y = S.exp(x, np.array([0.3, 0.0, 0.0]))
    E = S.frame(x)
    zero = walkers.zero_drift()
    # noise along the geodesic: the two points move in opposite directions
    eta = S.coords(x, E, np.array([1.0, 0.0, 0.0]))
    xn, _, yn, _, _ = coupling.reflection_step(S, x, E, y, S.transported_frame(E, x, y), zero, 1e-4, eta)
    assert math.isclose(S.distance(xn, yn), 0.3 - 2e-2, rel_tol=1e-6)


def test_flat_one_dimensional_gap_variance():
    M = Euclidean(1)
    rng = np.random.default_rng(2)
    n, delta = 20_000, 0.01
    x = np.zeros((n, 1))
    y = np.ones((n, 1))
    eta = rng.standard_normal((n, 1))
    E = np.ones((n, 1, 1))
    xn, _, yn, _, far = coupling.reflection_step(M, x, E, y, E, walkers.zero_drift(), delta, eta)
    step = (yn - xn - (y - x))[:, 0]
    assert far.all()
    assert abs(step.var() - 4 * delta) < 4 * 4 * delta * math.sqrt(2 / n)
    assert np.allclose(step, -2 * math.sqrt(delta) * eta[:, 0])


def test_reflection_disabled_close_to_diagonal():
    S = Sphere(2)
    x = S.origin()
    y = S.exp(x, np.array([1e-6, 0.0, 0.0]))
    E = S.frame(x)
    Ey = S.transported_frame(E, x, y)
    eta = np.array([0.4, -0.2])
    zero = walkers.zero_drift()
    _, _, yr, _, far = coupling.reflection_step(S, x, E, y, Ey, zero, 0.01, eta)
    _, _, ys = coupling.synchronous_step(S, x, E, y, zero, 0.01, eta)
    assert not far
    assert np.allclose(yr, ys, atol=1e-14)


def test_reflection_marginal_is_gaussian():
    S = Sphere(2)
    rng = np.random.default_rng(3)
    n, delta = 20_000, 0.01
    o = np.broadcast_to(S.origin(), (n, 3))
    x = S.exp(o, S.from_coords(S.frame(o), 0.3 * rng.standard_normal((n, 2))))
    y = S.exp(x, S.from_coords(S.frame(x), 0.4 * rng.standard_normal((n, 2))))
    Ex, Ey = S.frame(x), S.frame(y)
    eta = rng.standard_normal((n, 2))
    _, _, yn, _, _ = coupling.reflection_step(S, x, Ex, y, Ey, walkers.zero_drift(), delta, eta)
    c = S.coords(y, Ey, S.log(y, yn)) / math.sqrt(delta)
    for j in range(2):
        assert stats.kstest(c[:, j], "norm").pvalue > 0.01


def test_coupled_run_identical_starts_is_zero():
    S = Sphere(2)
    beta = walkers.log_drift(S, S.origin(), 1.0)
    x0 = S.exp(S.origin(), np.array([0.3, 0.0, 0.0]))
    for mode in ("sync", "reflect"):
        s = coupling.coupled_run(S, x0, x0, beta, 0.01, 30, mode, rng=np.random.default_rng(0))
        assert np.all(s.d == 0)
        assert not s.reflected.any()


def test_coupled_run_rejects_unknown_mode():
    S = Sphere(2)
    with pytest.raises(ValueError):
        coupling.coupled_run(S, S.origin(), S.origin(), walkers.zero_drift(), 0.1, 2, "maximal",
                             rng=np.random.default_rng(0))


def test_reflection_contracts_on_dissipative_sphere():
    S = Sphere(2)
    o = S.origin()
    E = S.frame(o)
    beta = walkers.log_drift(S, o, 2.0, q=1.0)
    x0, y0 = S.exp(o, 1.25 * E[0]), S.exp(o, -1.25 * E[0])
    lyap = coupling.LyapunovFunction(coupling.LyapunovParams.from_drift(1.0, 0.0, 1.0))
    eta = np.random.default_rng(5).standard_normal((400, 200, 2))
    s = coupling.coupled_run(S, x0, y0, beta, 0.01, 200, "reflect", eta=eta, lyapunov=lyap)
    f = s.f.mean(0)
    assert f[-1] < 0.5 * f[0]
    assert s.reflected.mean() > 0.5


# ---------------------------------------------------------------- Lyapunov

params = st.builds(
    lambda L, R, frac: coupling.LyapunovParams(L, R, frac * min(0.25, 1 / (4 * math.sqrt(L)), 1 / (4 * L * R))),
    st.floats(0.2, 4.0), st.floats(0.5, 3.0), st.floats(0.0, 1.0))


@given(params)
def test_lyapunov_shape(prm):
    F = coupling.LyapunovFunction(prm)
    r = np.linspace(0, 2 * (prm.R + prm.eps) + 0.5, 400)
    f, df, d2f = F(r), F.df(r), F.d2f(r)
    assert f[0] == 0
    assert np.all(np.diff(f) > 0)
    assert np.all(df > 0) and np.all(df <= 1 + 1e-12)
    assert np.all(d2f <= 1e-12)
    assert np.all(f[1:] <= r[1:] * (1 + 1e-12))
    flat = r > prm.R + prm.eps
    assert np.allclose(d2f[flat], 0)
    assert np.allclose(df[flat], df[flat][0])


@given(params)
def test_lyapunov_property_four(prm):
    F = coupling.LyapunovFunction(prm)
    r = np.linspace(1e-3, prm.R, 300)
    lhs = F.d2f(r) + prm.L * r * F.df(r)
    rhs = -math.exp(-(1 + prm.eps) * prm.L * prm.R ** 2 / 2) / ((1 + prm.eps) ** 2 * prm.R ** 2) * F(r)
    assert np.all(lhs <= rhs * (1 - 1e-9))


@pytest.mark.parametrize("L, R, eps", [(1.0, 2.0, 0.125), (2.0, 1.0, 0.1), (0.5, 1.5, 0.0)])
def test_lyapunov_derivatives_against_finite_differences(L, R, eps):
    F = coupling.LyapunovFunction(coupling.LyapunovParams(L, R, eps))
    h = 1e-4
    r = np.linspace(0.01, 2 * (R + eps), 311)
    r = r[(np.abs(r - R) > 2 * h) & (np.abs(r - R - eps) > 2 * h)]
    assert np.allclose((F(r + h) - F(r - h)) / (2 * h), F.df(r), atol=1e-8)
    assert np.allclose((F.df(r + h) - F.df(r - h)) / (2 * h), F.d2f(r), atol=1e-6)


def test_lyapunov_slope_floor_for_acceptance_parameters():
    prm = coupling.LyapunovParams(1.0, 2.0, 0.125)
    F = coupling.LyapunovFunction(prm)
    r = np.linspace(1e-3, 5, 1000)
    assert np.all(F.df(r) >= prm.slope_floor)
    assert np.all(F(r) / r >= prm.slope_floor)
    assert np.all(F.d2f(r) >= -4 * prm.L ** 1.5)


def test_lyapunov_parameter_validation():
    with pytest.raises(ValueError):
        coupling.LyapunovParams(1.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        coupling.LyapunovParams(0.0, 1.0)
    with pytest.raises(ValueError):
        coupling.LyapunovFunction(coupling.LyapunovParams(1.0, 1.0))(-1.0)
    assert coupling.LyapunovParams(1.0, 1.0, m=2.0).alpha > 0
    with pytest.raises(ValueError):
        coupling.LyapunovParams(1.0, 1.0).alpha


def test_cached_lyapunov_matches_direct():
    prm = coupling.LyapunovParams(1.5, 1.0, 0.05)
    r = np.array([0.1, 0.9, 2.0])
    assert np.array_equal(coupling.lyapunov_f(r, prm), coupling.LyapunovFunction(prm)(r))

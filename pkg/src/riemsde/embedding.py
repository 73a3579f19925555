"""``R^d`` with the metric ``g = A^{-1}``.

Conventions. ``Gamma[..., k, i, j]`` is the Levi-Civita symbol
``1/2 sum_l A_kl (d_i g_jl + d_j g_il - d_l g_ij)``. ``phi(x)_k = tr(A Gamma^k)``
and ``phi(x, v)_k = v^T Gamma^k v``. Geodesics solve ``x'' = -phi(x, x')``
and the Laplace-Beltrami operator is ``tr(A D^2 f) - <grad f, phi>``. The
minus sign is the one that matches the divergence form (checked by
:func:`laplace_beltrami_identity`). Consequently the chart SDE carries the
drift ``beta - phi/2`` while a geodesic step adds ``+delta/2 phi`` to its
tangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .matode import NumericalBlowup

__all__ = [
    "MetricField",
    "ChristoffelData",
    "ScalarField",
    "identity_metric",
    "diagonal_exponential_metric",
    "christoffel",
    "pullback_exp",
    "geodesic_speed",
    "corrected_step",
    "laplace_beltrami_identity",
    "euclidean_walk_pair",
    "euclidean_sde",
    "chart_sde_coefficients",
    "perturbation_bound",
]


@dataclass(frozen=True)
class MetricField:
    """``x -> A(x)`` with the analytic metric derivative ``dg[..., i, j, l] = d_i g_jl``."""

    dim: int
    A: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    lambda_A: float
    L_A: float
    L_A_prime: Optional[float] = None
    name: str = "metric"

    def g(self, x):
        return np.linalg.inv(self.A(x))

    def sqrt_A(self, x):
        w, V = np.linalg.eigh(self.A(x))
        return np.einsum("...ij,...j,...kj->...ik", V, np.sqrt(w), V)

    def check(self, xs, tol=1e-12):
        A = self.A(np.asarray(xs, float))
        if np.max(np.abs(A - np.swapaxes(A, -1, -2))) > tol:
            raise ValueError("A is not symmetric")
        w = np.linalg.eigvalsh(A)
        if w.min() < self.lambda_A * (1 - 1e-12) or w.max() > self.L_A * (1 + 1e-12):
            raise ValueError("eigenvalues of A outside [lambda_A, L_A]")


def identity_metric(dim: int) -> MetricField:
    def A(x):
        return np.broadcast_to(np.eye(dim), np.shape(x)[:-1] + (dim, dim)).copy()

    def dg(x):
        return np.zeros(np.shape(x)[:-1] + (dim,) * 3)

    return MetricField(dim, A, dg, 1.0, 1.0, 0.0, "identity")


def diagonal_exponential_metric(dim: int, s: float = 1.0, box: float = 2.0) -> MetricField:
    """``A = diag(exp(s x_1), 1, ..., 1)``; eigenvalue bounds hold on ``|x_1| <= box``."""

    def A(x):
        x = np.asarray(x, float)
        out = np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy()
        out[..., 0, 0] = np.exp(s * x[..., 0])
        return out

    def dg(x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1] + (dim,) * 3)
        out[..., 0, 0, 0] = -s * np.exp(-s * x[..., 0])
        return out

    lo, hi = math.exp(-abs(s) * box), math.exp(abs(s) * box)
    return MetricField(dim, A, dg, min(1.0, lo), max(1.0, hi), abs(s) * hi, "diagonal-exponential")


@dataclass
class ChristoffelData:
    Gamma: np.ndarray  # (..., k, i, j)
    phi: np.ndarray  # (..., k)
    L_phi: Optional[float] = None
    L_phi_prime: Optional[float] = None

    def phi_v(self, v):
        return np.einsum("...kij,...i,...j->...k", self.Gamma, v, v)


def _gamma(metric: MetricField, x):
    A = metric.A(x)
    dg = metric.dg(x)  # d_i g_jl at [..., i, j, l]
    t = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)  # [i, j, l]
    return 0.5 * np.einsum("...kl,...ijl->...kij", A, t)


def christoffel(metric: MetricField, x) -> ChristoffelData:
    x = np.asarray(x, float)
    G = _gamma(metric, x)
    phi = np.einsum("...ij,...kij->...k", metric.A(x), G)
    return ChristoffelData(G, phi)


def _phi_v(metric, x, v):
    return np.einsum("...kij,...i,...j->...k", _gamma(metric, x), v, v)


def _geodesic(metric, x, v, h, strict=True):
    x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
    n = max(1, int(math.ceil(1.0 / h - 1e-9)))
    dt = 1.0 / n

    def f(p, q):
        return q, -_phi_v(metric, p, q)

    p, q = x.copy(), v.copy()
    for _ in range(n):
        a1, b1 = f(p, q)
        a2, b2 = f(p + dt / 2 * a1, q + dt / 2 * b1)
        a3, b3 = f(p + dt / 2 * a2, q + dt / 2 * b2)
        a4, b4 = f(p + dt * a3, q + dt * b3)
        p = p + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        q = q + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
    if strict and not np.all(np.isfinite(p)):
        raise NumericalBlowup(1.0, "geodesic")
    return p, q


def pullback_exp(metric: MetricField, x, v, h: float = 1e-2, strict: bool = True):
    """Endpoint at unit time of ``x'' = -phi(x, x')`` by fixed-step RK4.

    With ``strict=False`` a blow-up yields non-finite entries instead of
    :class:`NumericalBlowup`.
    """
    return _geodesic(metric, x, v, h, strict)[0]


def geodesic_speed(metric: MetricField, x, v, h: float = 1e-2):
    """``(g-speed at 0, g-speed at 1)`` of the solved geodesic."""
    p, q = _geodesic(metric, x, v, h)

    def speed(y, w):
        return np.sqrt(np.einsum("...i,...ij,...j->...", w, metric.g(y), w))

    return speed(np.asarray(x, float), np.asarray(v, float)), speed(p, q)


def _value(beta, x):
    return beta(x) if callable(beta) else np.asarray(beta, float)


def corrected_step(metric: MetricField, x, beta, xi, delta: float, h: float = 1e-2):
    """One geodesic step with the ``+delta/2 phi`` tangent correction against
    the plain chart step.

    Returns ``(x', x~', (r1, r2))`` with ``r1 = ||x' - x~'||`` and
    ``r2 = ||x' - x~' + phi(x, sqrt(delta) xi)/2 - delta/2 phi(x)||``.
    """
    x = np.asarray(x, float)
    b = _value(beta, x)
    cd = christoffel(metric, x)
    w = delta * b + math.sqrt(delta) * np.asarray(xi, float)
    xp = pullback_exp(metric, x, w + 0.5 * delta * cd.phi, h)
    xe = x + w
    r1 = np.linalg.norm(xp - xe, axis=-1)
    corr = 0.5 * cd.phi_v(math.sqrt(delta) * np.asarray(xi, float)) - 0.5 * delta * cd.phi
    r2 = np.linalg.norm(xp - xe + corr, axis=-1)
    return xp, xe, (r1, r2)


@dataclass(frozen=True)
class ScalarField:
    value: Callable
    grad: Callable
    hess: Callable


def laplace_beltrami_identity(metric: MetricField, f: ScalarField, x, sign: float = -1.0,
                              h: float = 1e-4) -> np.ndarray:
    """``|tr(A D^2 f) + sign <grad f, phi> - Delta_div f|``.

    ``Delta_div f = det(g)^{-1/2} d_i(det(g)^{1/2} A_ij d_j f)`` by central
    differences of the flux. ``sign = -1`` is the canonical convention.
    """
    x = np.asarray(x, float)
    d = metric.dim
    A = metric.A(x)
    phi = christoffel(metric, x).phi
    coord = np.einsum("...ij,...ij->...", A, f.hess(x)) + sign * np.einsum("...i,...i->...", f.grad(x), phi)

    def flux(y):
        vol = np.sqrt(np.linalg.det(metric.g(y)))
        return vol[..., None] * np.einsum("...ij,...j->...i", metric.A(y), f.grad(y))

    div = np.zeros(x.shape[:-1])
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        div = div + (flux(x + e)[..., i] - flux(x - e)[..., i]) / (2 * h)
    div = div / np.sqrt(np.linalg.det(metric.g(x)))
    return np.abs(coord - div)


def euclidean_walk_pair(metric: MetricField, x0, beta, delta: float, K: int, eta, h: float = 1e-2):
    """Corrected geodesic walk ``x_k`` and plain chart walk ``z_k`` on one noise.

    ``x_{k+1} = Exp_{x_k}(delta beta + sqrt(delta) xi_k(x_k) + delta/2 phi(x_k))``,
    ``z_{k+1} = z_k + delta beta(z_k) + sqrt(delta) xi_k(z_k)``, with
    ``xi_k(x) = A(x)^{1/2} eta_k``. Returns two ``(..., K+1, d)`` arrays.
    """
    eta = np.asarray(eta, float)
    batch = eta.shape[:-2]
    x = np.broadcast_to(np.asarray(x0, float), batch + (metric.dim,)).copy()
    z = x.copy()
    sd = math.sqrt(delta)
    xs, zs = [x], [z]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            e = eta[..., k, :]
            xi_x = np.einsum("...ij,...j->...i", metric.sqrt_A(x), e)
            xi_z = np.einsum("...ij,...j->...i", metric.sqrt_A(z), e)
            phi = christoffel(metric, x).phi
            x = pullback_exp(metric, x, delta * _value(beta, x) + sd * xi_x + 0.5 * delta * phi, h, strict=False)
            x = np.where(np.all(np.isfinite(x), -1, keepdims=True), x, np.nan)
            z = z + delta * _value(beta, z) + sd * xi_z
            xs.append(x)
            zs.append(z)
    return np.stack(xs, -2), np.stack(zs, -2)


def chart_sde_coefficients(metric: MetricField, beta):
    """Drift ``beta - phi/2`` and diffusion ``A^{1/2}`` of the chart SDE."""

    def drift(x):
        return _value(beta, x) - 0.5 * christoffel(metric, x).phi

    return drift, metric.sqrt_A


def euclidean_sde(drift, diffusion, x0, dt: float, dW):
    """Euler-Murayama for ``dz = drift dt + diffusion dW``; ``dW`` is ``(..., K, d)``."""
    dW = np.asarray(dW, float)
    z = np.broadcast_to(np.asarray(x0, float), dW.shape[:-2] + dW.shape[-1:]).copy()
    out = [z]
    for k in range(dW.shape[-2]):
        z = z + dt * drift(z) + np.einsum("...ij,...j->...i", diffusion(z), dW[..., k, :])
        out.append(z)
    return np.stack(out, -2)


def perturbation_bound(T: float, L_u_prime: float, L_F_prime: float, eps_u: float,
                       eps_F: float, d0_sq) -> np.ndarray:
    """``exp(T(2 L_u' + 2 L_F' + 1)) (||x0 - y0||^2 + 8 T (eps_u^2 + eps_F^2))``."""
    return math.exp(T * (2 * L_u_prime + 2 * L_F_prime + 1)) * (np.asarray(d0_sq) + 8 * T * (eps_u ** 2 + eps_F ** 2))

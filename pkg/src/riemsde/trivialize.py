"""Trivializing a geodesic triangle in one tangent space.

Given ``x``, ``u`` and ``v`` in ``T_x M``, the curve ``a(s)`` in ``T_x M``
solves ``a'' = F(a, a')`` with ``a(0) = u`` and ``a'(0) = v``. Its image
``Exp_x(a(s))`` traces the geodesic from ``Exp_x(u)`` in the direction of the
transported Jacobi vector ``G(u) v``.

Work happens in coordinates of an orthonormal frame ``E`` at ``x``, carried
along ``t -> Exp_x(t u)``. The Jacobi system ``J'' = M J`` then has
``M_ij = -R_ijkl u_k u_l``. Only manifolds that supply curvature coordinates
are supported (Euclidean, sphere and hyperboloid).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import matode
from .geometry import Manifold

__all__ = [
    "RadiusError",
    "JacobiState",
    "TrivializationCurve",
    "jacobi_coords",
    "tensor_G",
    "forcing_p",
    "forcing_F",
    "trivialized_geodesic",
    "triangle_distortion_check",
]

SIMPSON_NODES = 65
FORCING_COEFFICIENT = 4.0


class RadiusError(ValueError):
    """An input tangent is longer than the admissible radius."""


@dataclass
class JacobiState:
    J: np.ndarray
    K: np.ndarray
    t: float


@dataclass
class TrivializationCurve:
    s: np.ndarray  # (S,)
    a: np.ndarray  # (S, ..., n)
    da: np.ndarray  # (S, ..., n)
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def end(self) -> np.ndarray:
        return self.a[-1]


def _check_radius(manifold, x, *vs):
    c = manifold.bounds().C_r
    for w in vs:
        if np.any(manifold.norm(x, w) > c * (1 + 1e-12)):
            raise RadiusError(f"tangent norm exceeds the admissible radius {c:.6g}")


class _Curvature:
    """Curvature coordinates at ``x`` in frame ``E`` (constant along ``gamma``)."""

    def __init__(self, manifold: Manifold, x, E):
        if manifold.curvature is None:
            raise NotImplementedError(f"{manifold.name} does not support trivialization")
        self.R, self.dR = manifold.curvature_coords(x, E)
        self.dim = manifold.dim
        self.K = None if np.any(self.dR) else manifold.curvature

    def M(self, uc):
        return -np.einsum("ijkl,...k,...l->...ij", self.R, uc, uc, optimize=True)

    def blocks(self, uc, ts, h=None):
        path = matode.MatrixPath.from_constant(self.M(uc))
        return matode.second_order_blocks_grid(path, ts, h)

    def exponent(self, uc, ts, h=None):
        """Stacked exponent of ``[[0, I], [M, 0]]`` on the grid ``ts``."""
        path = matode.MatrixPath.from_constant(self.M(uc))
        return matode.matrix_exponent_grid(matode.stacked_generator(path), ts, h)

    def p(self, uc, J, K, coefficient):
        if self.K is not None:
            # R(J, u) K = kappa (<u, K> J - <J, K> u)
            uK = sum(uc[..., j] * K[..., j] for j in range(self.dim))[..., None]
            JK = sum(J[..., j] * K[..., j] for j in range(self.dim))[..., None]
            return -coefficient * self.K * (uK * J - JK * uc)
        return self.p_tensor(uc, J, K, coefficient)

    def p_tensor(self, uc, J, K, coefficient):
        """Direct contraction of the curvature coordinates."""
        out = -coefficient * np.einsum("ijkl,...j,...k,...l->...i", self.R, J, uc, K, optimize=True)
        if np.any(self.dR):
            out = out - np.einsum("mijkl,...m,...j,...k,...l->...i", self.dR, J, J, uc, uc, optimize=True)
            out = out - np.einsum("mijkl,...m,...j,...k,...l->...i", self.dR, uc, J, uc, J, optimize=True)
        return out

    def step_map(self, uc, dt):
        path = matode.stacked_generator(matode.MatrixPath.from_constant(self.M(uc)))
        return matode.constant_step_map(path, dt)

    def F(self, uc, vc, nodes=SIMPSON_NODES, coefficient=FORCING_COEFFICIENT):
        """Forcing integral on a uniform grid with Simpson weights.

        With ``P`` the one-interval step map of the stacked Jacobi system,
        ``(J, K)(r_k) = P^k (0, v)`` and ``B(1 - r_j) p_j`` is the top block of
        ``P^(n-j) (0, p_j)``, so the weighted sum is a Horner recursion.
        """
        if nodes % 2 == 0:
            raise ValueError("Simpson needs an odd node count")
        d = self.dim
        n = nodes - 1
        P = self.step_map(uc, 1.0 / n)
        # batch-last layout: the tiny products vectorize over the batch
        Pt = np.ascontiguousarray(np.moveaxis(P, (-2, -1), (0, 1)))
        y = np.moveaxis(np.concatenate([np.zeros_like(vc), vc], axis=-1), -1, 0)
        Y = np.empty((nodes,) + y.shape)
        Y[0] = y
        for k in range(1, nodes):
            y = np.einsum("ij...,j...->i...", Pt, y)
            Y[k] = y
        if not np.all(np.isfinite(y)):
            raise matode.NumericalBlowup(1.0)
        J, K = Y[:, :d], Y[:, d:]
        if self.K is not None:
            ut = np.moveaxis(uc, -1, 0)
            uK = np.sum(ut * K, axis=1, keepdims=True)
            JK = np.sum(J * K, axis=1, keepdims=True)
            p = -coefficient * self.K * (uK * J - JK * ut)
        else:
            pl = self.p(uc, np.moveaxis(J, 1, -1), np.moveaxis(K, 1, -1), coefficient)
            p = np.moveaxis(pl, -1, 1)
        w = np.ones(nodes)
        w[1:-1:2], w[2:-1:2] = 4.0, 2.0
        w /= 3.0 * n
        S = np.zeros_like(y)
        for j in range(nodes):
            S = np.einsum("ij...,j...->i...", Pt, S)
            S[d:] += w[j] * p[j]
        integral = np.moveaxis(S[:d], 0, -1)
        B1 = np.linalg.matrix_power(P, n)[..., :d, d:]
        gap = B1 - np.eye(d)
        # Frobenius bounds the spectral norm; only refine when it is large
        if np.any(np.sqrt(np.sum(gap ** 2, axis=(-2, -1))) >= 0.5):
            if np.any(np.linalg.norm(gap, ord=2, axis=(-2, -1)) >= 0.5):
                raise RadiusError("B(1) too far from the identity to invert safely")
        return -np.linalg.solve(B1, integral[..., None])[..., 0]


def _frame(manifold, x, E):
    return manifold.frame(x) if E is None else np.asarray(E, float)


def jacobi_coords(manifold: Manifold, x, E, u, v, t: float, h: Optional[float] = None) -> JacobiState:
    """Coordinates of ``J(t)`` and ``J'(t)`` for ``J(0) = 0``, ``J'(0) = v``."""
    E = _frame(manifold, x, E)
    curv = _Curvature(manifold, x, E)
    uc, vc = manifold.coords(x, E, u), manifold.coords(x, E, v)
    if t == 0:
        return JacobiState(np.zeros_like(vc), vc.copy(), 0.0)
    _, B, _, D = curv.blocks(uc, [0.0, t], h)
    return JacobiState(np.einsum("...ij,...j->...i", B[-1], vc),
                       np.einsum("...ij,...j->...i", D[-1], vc), float(t))


def tensor_G(manifold: Manifold, x, E, u, h: Optional[float] = None, check_radius: bool = True):
    """``G(u) = B(1; u)``, acting on frame coordinates of ``v``."""
    if check_radius:
        _check_radius(manifold, x, u)
    E = _frame(manifold, x, E)
    curv = _Curvature(manifold, x, E)
    _, B, _, _ = curv.blocks(manifold.coords(x, E, u), [0.0, 1.0], h)
    return B[-1]


def forcing_p(manifold: Manifold, x, E, u, v, t: float, coefficient: float = FORCING_COEFFICIENT):
    """Frame coordinates of the forcing term at time ``t``.

    ``coefficient`` multiplies the ``R(J, gamma') K`` term.
    """
    E = _frame(manifold, x, E)
    curv = _Curvature(manifold, x, E)
    st = jacobi_coords(manifold, x, E, u, v, t)
    return curv.p(manifold.coords(x, E, u), st.J, st.K, coefficient)


def forcing_F(manifold: Manifold, x, E, u, v, nodes: int = SIMPSON_NODES,
              coefficient: float = FORCING_COEFFICIENT, check_radius: bool = True):
    """``F(u, v) = -B(1)^{-1} int_0^1 Bbar(r) p(r) dr`` as a tangent at ``x``."""
    E = _frame(manifold, x, E)
    curv = _Curvature(manifold, x, E)
    if check_radius:
        K = abs(manifold.curvature)
        if np.any(K * manifold.norm(x, u) ** 2 > 0.25):
            raise RadiusError("curvature times |u|^2 exceeds 1/4")
    Fc = curv.F(manifold.coords(x, E, u), manifold.coords(x, E, v), nodes, coefficient)
    return manifold.from_coords(E, Fc)


def trivialized_geodesic(manifold: Manifold, x, E, u, v, h: float = 1e-3,
                         nodes: int = SIMPSON_NODES, coefficient: float = FORCING_COEFFICIENT,
                         check_radius: bool = True) -> TrivializationCurve:
    """Integrate ``a'' = F(a, a')`` on ``[0, 1]`` with RK4, ``F`` fresh at every stage."""
    if check_radius:
        _check_radius(manifold, x, u, v)
    E = _frame(manifold, x, E)
    curv = _Curvature(manifold, x, E)
    ac, dc = manifold.coords(x, E, u), manifold.coords(x, E, v)

    def rhs(y):
        a, da = y
        return np.stack([da, curv.F(a, da, nodes, coefficient)])

    y = np.stack([ac, dc])
    steps = matode._steps(1.0, h)
    s = [0.0]
    traj = [y]
    for dt in steps:
        k1 = rhs(y)
        k2 = rhs(y + dt / 2 * k1)
        k3 = rhs(y + dt / 2 * k2)
        k4 = rhs(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise matode.NumericalBlowup(s[-1] + dt)
        s.append(s[-1] + dt)
        traj.append(y)
    traj = np.stack(traj)
    a = manifold.from_coords(E, traj[:, 0])
    da = manifold.from_coords(E, traj[:, 1])
    return TrivializationCurve(np.array(s), a, da, np.asarray(x, float),
                               np.asarray(u, float), np.asarray(v, float))


def transported_G_target(manifold: Manifold, x, E, u, v, h: Optional[float] = None,
                         check_radius: bool = True):
    """``Exp_{x'}(Gamma_x^{x'} G(u) v)`` with ``x' = Exp_x(u)``."""
    E = _frame(manifold, x, E)
    G = tensor_G(manifold, x, E, u, h, check_radius)
    xp = manifold.exp(x, u)
    Ep = manifold.transported_frame(E, x, xp)
    w = manifold.from_coords(Ep, np.einsum("...ij,...j->...i", G, manifold.coords(x, E, v)))
    return manifold.exp(xp, w)


def triangle_distortion_check(manifold: Manifold, x, u, v, E=None, check_radius: bool = True):
    """``(lhs, rhs)``: the distance ``d(Exp_x(u+v), Exp_{x'}(Gamma G(u) v))``
    and its curvature bound ``2^12 (L_R'(|u|+|v|)^2 + L_R(|u|+|v|)) |v|^2``."""
    if check_radius:
        _check_radius(manifold, x, u, v)
    E = _frame(manifold, x, E)
    target = transported_G_target(manifold, x, E, u, v, check_radius=False)
    lhs = manifold.distance(manifold.exp(x, u + v), target)
    b = manifold.bounds()
    s = manifold.norm(x, u) + manifold.norm(x, v)
    rhs = 2.0 ** 12 * (b.L_R_prime * s ** 2 + b.L_R * s) * manifold.norm(x, v) ** 2
    return lhs, rhs

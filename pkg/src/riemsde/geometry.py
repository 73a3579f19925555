"""Manifolds with closed-form geodesics, transport and curvature.

Points, tangents and frames are plain arrays with optional leading batch
dimensions:

* point ``x``: shape ``(..., n)`` in ambient (sphere, hyperboloid) or chart
  (Euclidean, pullback) coordinates,
* tangent ``v`` at ``x``: shape ``(..., n)`` in the same representation,
* frame ``E`` at ``x``: shape ``(..., d, n)``, one tangent per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CutLocusError",
    "CurvatureBounds",
    "Manifold",
    "Euclidean",
    "Sphere",
    "Hyperboloid",
    "Pullback",
    "make_manifold",
]

CUT_MARGIN = 1e-6
TANGENT_TOL = 1e-8


class CutLocusError(ValueError):
    """The minimizing geodesic is not unique (or too close to not being)."""


@dataclass(frozen=True)
class CurvatureBounds:
    L_R: float
    L_R_prime: float
    L_R_double_prime: float
    L_Ric: float
    C_r: float

    @classmethod
    def derive(cls, L_R, L_R_prime=0.0, L_R_double_prime=0.0, L_Ric=0.0):
        a = math.inf if L_R_prime == 0 else L_R_prime ** (-1.0 / 3.0)
        b = math.inf if L_R == 0 else 1.0 / (8.0 * math.sqrt(L_R))
        return cls(L_R, L_R_prime, L_R_double_prime, L_Ric, min(a, b) / 16.0)


def _sinc(a):
    return np.sinc(a / np.pi)


def _sinhc(a):
    a = np.asarray(a, float)
    small = np.abs(a) < 1e-4
    safe = np.where(small, 1.0, a)
    return np.where(small, 1 + a * a / 6, np.sinh(safe) / safe)


class Manifold:
    """Common interface. Subclasses implement the geometry."""

    name = "manifold"
    dim: int
    ambient: int
    curvature: float | None = None  # constant sectional curvature when known

    # metric ---------------------------------------------------------------
    def inner(self, x, u, v):
        return np.sum(u * v, axis=-1)

    def norm(self, x, v):
        return np.sqrt(np.maximum(self.inner(x, v, v), 0.0))

    def coords(self, x, E, v):
        """Coordinates of ``v`` in the orthonormal frame ``E``."""
        return self.inner(x[..., None, :], E, v[..., None, :])

    @staticmethod
    def from_coords(E, c):
        return np.einsum("...i,...in->...n", c, E)

    def gram(self, x, E):
        return self.inner(x[..., None, None, :], E[..., :, None, :], E[..., None, :, :])

    # checks ---------------------------------------------------------------
    def check_point(self, x, tol=1e-9):
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite point")

    def check_tangent(self, x, v, tol=TANGENT_TOL):
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite tangent")

    def check_frame(self, x, E, tol=1e-8):
        g = self.gram(x, E)
        if np.max(np.abs(g - np.eye(self.dim)), initial=0.0) > tol:
            raise ValueError("frame is not orthonormal")

    # geometry -------------------------------------------------------------
    def transported_frame(self, E, x, y, strict=True):
        return self.transport(E, x[..., None, :], y[..., None, :], strict=strict)

    def bounds(self) -> CurvatureBounds:
        K = self.curvature or 0.0
        return CurvatureBounds.derive(abs(K), 0.0, 0.0, max(0.0, -(self.dim - 1) * K))

    def curvature_coords(self, x, E):
        """``R[i, j, k, l] = <R(E_j, E_k) E_l, E_i>`` and ``nabla R`` coordinates.

        Uses ``R(u, v) w = K(<v, w> u - <u, w> v)``, so that the sectional
        curvature ``<R(e1, e2) e2, e1>`` equals ``K``. The derivative array has
        the differentiation index first and vanishes for constant curvature.
        """
        if self.curvature is None:
            raise NotImplementedError(f"{self.name}: curvature coordinates unavailable")
        d = self.dim
        eye = np.eye(d)
        R = self.curvature * (np.einsum("kl,ij->ijkl", eye, eye)
                              - np.einsum("jl,ik->ijkl", eye, eye))
        return R, np.zeros((d,) * 5)

    def frame(self, x):
        raise NotImplementedError

    def project(self, x):
        return x

    def to_tangent(self, x, v):
        return v


class Euclidean(Manifold):
    name = "euclidean"
    curvature = 0.0

    def __init__(self, dim: int):
        self.dim = self.ambient = int(dim)

    def exp(self, x, v, check=True):
        return x + v

    def log(self, x, y, strict=True):
        return y - x

    def distance(self, x, y):
        return np.linalg.norm(y - x, axis=-1)

    def transport(self, v, x, y, strict=True):
        return np.array(v, dtype=float, copy=True)

    def frame(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def origin(self):
        return np.zeros(self.dim)


class _ConstantCurvature(Manifold):
    """Shared code for the sphere and hyperboloid of radius ``rho``."""

    sign = 1.0

    def __init__(self, dim: int, radius: float = 1.0):
        self.dim = int(dim)
        self.ambient = self.dim + 1
        self.radius = float(radius)
        self.curvature = self.sign / self.radius ** 2

    def _ip(self, a, b):
        raise NotImplementedError

    def inner(self, x, u, v):
        return self._ip(u, v)

    def check_point(self, x, tol=1e-9):
        super().check_point(x)
        err = np.abs(self._ip(x, x) - self.sign * self.radius ** 2)
        if np.max(err, initial=0.0) > tol * self.radius ** 2:
            raise ValueError(f"point off the {self.name}")

    def check_tangent(self, x, v, tol=TANGENT_TOL):
        super().check_tangent(x, v)
        scale = np.maximum(1.0, self.norm(x, v)) * self.radius
        if np.any(np.abs(self._ip(x, v)) > tol * scale):
            raise ValueError("vector not tangent at base point (mismatched base?)")

    def to_tangent(self, x, v):
        """Project ``v`` onto ``T_x``."""
        return v - self.sign * (self._ip(x, v) / self.radius ** 2)[..., None] * x


class Sphere(_ConstantCurvature):
    """Sphere of radius ``rho`` in ``R^{d+1}``, curvature ``1/rho^2``."""

    name = "sphere"
    sign = 1.0

    def _ip(self, a, b):
        return np.sum(a * b, axis=-1)

    def project(self, x):
        return self.radius * x / np.linalg.norm(x, axis=-1, keepdims=True)

    def origin(self):
        o = np.zeros(self.ambient)
        o[-1] = self.radius
        return o

    def exp(self, x, v, check=True):
        if check:
            self.check_tangent(x, v)
        a = np.linalg.norm(v, axis=-1, keepdims=True) / self.radius
        return self.project(np.cos(a) * x + _sinc(a) * v)

    def _angle(self, x, y):
        xh, yh = x / self.radius, y / self.radius
        diff = yh - xh
        w = diff - np.sum(xh * diff, axis=-1, keepdims=True) * xh
        s = np.linalg.norm(w, axis=-1)
        c = np.sum(xh * yh, axis=-1)
        return np.arctan2(s, c), w

    def distance(self, x, y):
        return self.radius * self._angle(x, y)[0]

    def log(self, x, y, strict=True):
        """Inverse exponential map.

        Beyond the cut-locus margin this raises, or with ``strict=False``
        returns NaN rows so batched callers can drop those replicas.
        """
        theta, w = self._angle(x, y)
        bad = theta > np.pi - CUT_MARGIN
        if strict and np.any(bad):
            raise CutLocusError("points are (nearly) antipodal")
        fac = np.where(bad, np.nan, 1.0 / _sinc(np.minimum(theta, np.pi - CUT_MARGIN)))
        return self.radius * fac[..., None] * w

    def transport(self, v, x, y, strict=True):
        xh, yh = x / self.radius, y / self.radius
        c = np.sum(xh * yh, axis=-1, keepdims=True)
        bad = c < -1 + 0.5 * CUT_MARGIN ** 2
        if strict and np.any(bad):
            raise CutLocusError("transport between (nearly) antipodal points")
        coef = np.sum(yh * v, axis=-1, keepdims=True) / np.where(bad, np.nan, 1.0 + c)
        return v - coef * (xh + yh)

    def frame(self, x):
        x = np.asarray(x, float)
        xh = x / self.radius
        n = self.ambient
        skip = np.argmax(np.abs(xh), axis=-1)
        basis = np.eye(n)
        vecs = []
        for j in range(self.dim):
            # j-th ambient axis, skipping the one most aligned with x
            k = np.where(j < skip, j, j + 1)
            w = basis[k] - np.take_along_axis(xh, k[..., None], -1) * xh
            for u in vecs:
                w = w - np.sum(u * w, axis=-1, keepdims=True) * u
            w = w / np.linalg.norm(w, axis=-1, keepdims=True)
            vecs.append(w)
        return np.stack(vecs, axis=-2)


class Hyperboloid(_ConstantCurvature):
    """Hyperboloid ``<x, x>_L = -rho^2``, ``x_0 > 0``; curvature ``-1/rho^2``.

    The Minkowski product carries the minus sign on index 0.
    """

    name = "hyperboloid"
    sign = -1.0

    def _ip(self, a, b):
        return np.sum(a[..., 1:] * b[..., 1:], axis=-1) - a[..., 0] * b[..., 0]

    def project(self, x):
        out = np.array(x, dtype=float, copy=True)
        out[..., 0] = np.sqrt(self.radius ** 2 + np.sum(out[..., 1:] ** 2, axis=-1))
        return out

    def origin(self):
        o = np.zeros(self.ambient)
        o[0] = self.radius
        return o

    def exp(self, x, v, check=True):
        if check:
            self.check_tangent(x, v)
        a = self.norm(x, v)[..., None] / self.radius
        return self.project(np.cosh(a) * x + _sinhc(a) * v)

    def _angle(self, x, y):
        xh, yh = x / self.radius, y / self.radius
        diff = yh - xh
        half = np.maximum(self._ip(diff, diff), 0.0)  # = 2 (cosh t - 1)
        theta = 2.0 * np.arcsinh(np.sqrt(half) / 2.0)
        w = diff - (0.5 * half)[..., None] * xh
        return theta, w

    def distance(self, x, y):
        return self.radius * self._angle(x, y)[0]

    def log(self, x, y, strict=True):
        theta, w = self._angle(x, y)
        return self.radius * (1.0 / _sinhc(theta))[..., None] * w

    def transport(self, v, x, y, strict=True):
        xh, yh = x / self.radius, y / self.radius
        coef = self._ip(yh, v)[..., None] / (1.0 - self._ip(xh, yh))[..., None]
        return v + coef * (xh + yh)

    def frame(self, x):
        x = np.asarray(x, float)
        xh = x / self.radius
        vecs = []
        for j in range(self.dim):
            e = np.zeros(self.ambient)
            e[j + 1] = 1.0
            w = e + self._ip(e, xh)[..., None] * xh
            for u in vecs:
                w = w - self._ip(u, w)[..., None] * u
            w = w / np.sqrt(self._ip(w, w))[..., None]
            vecs.append(w)
        return np.stack(vecs, axis=-2)


class Pullback(Manifold):
    """``R^d`` with metric ``g = A^{-1}`` from an embedding ``MetricField``.

    Only the operations with a tractable closed form or a forward solve are
    offered: exp (geodesic ODE), metric, frames and the chart-distance
    sandwich. Log and transport would need boundary-value shooting.
    """

    name = "pullback"

    def __init__(self, metric, h: float = 1e-2):
        self.metric = metric
        self.dim = self.ambient = metric.dim
        self.h = h

    def inner(self, x, u, v):
        g = self.metric.g(x)
        return np.einsum("...i,...ij,...j->...", u, g, v)

    def exp(self, x, v, check=True):
        from .embedding import pullback_exp
        return pullback_exp(self.metric, x, v, self.h)

    def log(self, x, y, strict=True):
        raise NotImplementedError("pullback log needs geodesic shooting (not provided)")

    def transport(self, v, x, y, strict=True):
        raise NotImplementedError("pullback transport is not provided")

    def distance(self, x, y):
        raise NotImplementedError("use distance_bounds for the pullback metric")

    def distance_bounds(self, x, y):
        """``||x - y|| / sqrt(L_A) <= d(x, y) <= ||x - y|| / sqrt(lambda_A)``."""
        e = np.linalg.norm(np.asarray(y) - np.asarray(x), axis=-1)
        return e / math.sqrt(self.metric.L_A), e / math.sqrt(self.metric.lambda_A)

    def frame(self, x):
        A = self.metric.A(x)
        w, V = np.linalg.eigh(A)
        root = np.einsum("...ij,...j,...kj->...ik", V, np.sqrt(w), V)
        return np.swapaxes(root, -1, -2)

    def curvature_coords(self, x, E):
        raise NotImplementedError("pullback curvature coordinates are not provided")


def make_manifold(kind: str, dim: int = 2, scale: float = 1.0) -> Manifold:
    kind = kind.lower()
    if kind in ("euclidean", "flat"):
        return Euclidean(dim)
    if kind in ("sphere", "s"):
        return Sphere(dim, scale)
    if kind in ("hyperboloid", "hyperbolic", "h"):
        return Hyperboloid(dim, scale)
    raise ValueError(f"unknown manifold kind {kind!r}")

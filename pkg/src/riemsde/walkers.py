"""Discrete processes on manifolds.

* geometric Euler-Murayama and the coupled dyadic family of levels,
* the deep-level stand-in for the exact SDE,
* the one-step walk with arbitrary (possibly non-Gaussian) noise,
* the straight-line walk in the tangent space of the starting point.

All walkers are batched over leading dimensions of the starting point and
the noise arrays; a replica whose step leaves the unique-geodesic region
becomes NaN instead of stopping the whole batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .brownian import BrownianPath, NoiseModel
from .geometry import CutLocusError, Manifold

__all__ = [
    "DriftField",
    "Trajectory",
    "DyadicResult",
    "log_drift",
    "constant_drift",
    "zero_drift",
    "dyadic_levels",
    "euler_murayama",
    "refine_pair",
    "reference_sde",
    "nongaussian_walk",
    "tangent_walk",
]


@dataclass
class DriftField:
    """A vector field ``x -> beta(x)`` with declared regularity constants."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    L_beta: Optional[float] = None
    L_beta_prime: Optional[float] = None
    m: Optional[float] = None
    q: Optional[float] = None
    R: Optional[float] = None
    x_star: Optional[np.ndarray] = None

    def __call__(self, x):
        return self.evaluate(x)


def log_drift(manifold: Manifold, x_star, m: float, radius: float = math.pi / 2,
              q: float = 0.0, R: float = 1.0) -> DriftField:
    """``beta(x) = m Log_x(x*)``, attracting towards ``x*``.

    On the unit sphere the covariant derivative has eigenvalues ``-m`` and
    ``-m r cot r``, so ``L_beta' = m`` holds within distance ``pi/2``; the
    sup bound uses ``radius``. Cut-locus points give NaN.
    """
    x_star = np.asarray(x_star, float)

    def ev(x):
        return m * manifold.log(x, np.broadcast_to(x_star, np.shape(x)), strict=False)

    K = manifold.curvature or 0.0
    lip = m if K >= 0 else m * radius * math.sqrt(-K) / math.tanh(radius * math.sqrt(-K))
    return DriftField(ev, L_beta=m * radius, L_beta_prime=lip, m=m, q=q, R=R, x_star=x_star)


def constant_drift(b) -> DriftField:
    """Constant field on Euclidean space."""
    b = np.asarray(b, float)
    return DriftField(lambda x: np.broadcast_to(b, np.shape(x)).copy(),
                      L_beta=float(np.linalg.norm(b)), L_beta_prime=0.0)


def zero_drift() -> DriftField:
    return DriftField(lambda x: np.zeros(np.shape(x)), L_beta=0.0, L_beta_prime=0.0)


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray  # (..., K+1, n)
    frames: Optional[np.ndarray] = None  # (..., K+1, d, n)
    kind: str = ""
    level: Optional[int] = None
    seed: Optional[int] = None

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[..., -1, :]


@dataclass
class DyadicResult:
    endpoints: list  # level -> (..., n)
    sup_d2: np.ndarray  # (L, ...) sup over the finer grid of d(x^i, x^{i+1})^2
    trajectories: dict = field(default_factory=dict)

    @property
    def aborted(self) -> np.ndarray:
        return ~np.all(np.isfinite(self.endpoints[-1]), axis=-1)


def _step(manifold, x, E, b, dt, coords):
    v = dt * b + manifold.from_coords(E, coords)
    return manifold.exp(x, v, check=False)


def dyadic_levels(manifold: Manifold, x0, E0, beta: DriftField, path: BrownianPath,
                  L: Optional[int] = None, record=(), compare: bool = True,
                  interpolant: str = "scaled") -> DyadicResult:
    """Run levels ``0..L`` of the coupled dyadic construction in lockstep.

    Level ``i`` has step ``T / 2**i`` and uses the level-``i`` view of the
    shared path. At odd nodes a level carries its own frame along its step;
    at even nodes it takes the parent level's frame, transported from the
    parent's node. ``sup_d2[i]`` is the largest squared distance between
    levels ``i`` and ``i+1`` over the level-``i+1`` grid, with level ``i``
    evaluated through its interpolant at the midpoints.

    ``interpolant="frozen"`` moves along ``(t - k delta) beta + (B(t) - B(k delta))``
    from each node; ``"scaled"`` multiplies the Brownian part by
    ``(t - k delta) / delta``.
    """
    if interpolant not in ("frozen", "scaled"):
        raise ValueError(f"unknown interpolant {interpolant!r}")
    w = 1.0 if interpolant == "frozen" else 0.5
    L = path.i_max if L is None else int(L)
    if L > path.i_max:
        raise ValueError("level exceeds the path depth")
    incs = [path.level(i) for i in range(L + 1)]
    batch = incs[0].shape[:-2]
    n = manifold.ambient
    x0 = np.broadcast_to(np.asarray(x0, float), batch + (n,)).copy()
    E0 = np.broadcast_to(np.asarray(E0, float), batch + (manifold.dim, n)).copy()
    X = [x0.copy() for _ in range(L + 1)]
    F = [E0.copy() for _ in range(L + 1)]
    mids = [None] * (L + 1)
    odd = [None] * (L + 1)
    sup = np.zeros((L,) + batch)
    rec = {lvl: ([x0.copy()], [E0.copy()]) for lvl in record}
    strides = [2 ** (L - i) for i in range(L + 1)]
    deltas = [path.delta(i) for i in range(L + 1)]
    for tick in range(1, 2 ** L + 1):
        for i in range(L + 1):
            if tick % strides[i]:
                continue
            node = tick // strides[i]  # index being produced
            x, E = X[i], F[i]
            b = beta(x)
            xn = _step(manifold, x, E, b, deltas[i], incs[i][..., node - 1, :])
            if compare and i < L:
                half = incs[i + 1][..., 2 * (node - 1), :]
                mids[i] = _step(manifold, x, E, b, 0.5 * deltas[i], w * half)
            if node % 2 == 1 or i == 0:
                En = manifold.transported_frame(E, x, xn, strict=False)
            else:
                En = manifold.transported_frame(F[i - 1], X[i - 1], xn, strict=False)
            X[i], F[i] = xn, En
            if node % 2 == 1:
                odd[i] = xn
            if i in rec:
                rec[i][0].append(xn)
                rec[i][1].append(En)
        if compare:
            for i in range(L):
                if tick % strides[i]:
                    continue
                d_end = manifold.distance(X[i], X[i + 1])
                d_mid = manifold.distance(mids[i], odd[i + 1])
                # np.maximum keeps a NaN once it appears
                sup[i] = np.maximum(sup[i], np.maximum(d_end, d_mid) ** 2)
    trajs = {}
    for lvl, (ps, fs) in rec.items():
        K = 2 ** lvl
        trajs[lvl] = Trajectory(np.linspace(0.0, path.T, K + 1), np.stack(ps, axis=-2),
                                np.stack(fs, axis=-3), "euler-murayama", lvl, path.seed)
    return DyadicResult([X[i] for i in range(L + 1)], sup, trajs)


def euler_murayama(manifold, x0, E0, beta, path: BrownianPath, level: int) -> Trajectory:
    """Level-``level`` trajectory of the coupled construction."""
    if level > path.i_max:
        raise ValueError("level exceeds the path depth")
    return dyadic_levels(manifold, x0, E0, beta, path, level, record=(level,),
                         compare=False).trajectories[level]


def refine_pair(manifold, x0, E0, beta, path: BrownianPath, level: int):
    """Trajectories of levels ``level`` and ``level + 1`` on one shared path."""
    res = dyadic_levels(manifold, x0, E0, beta, path, level + 1,
                        record=(level, level + 1), compare=False)
    return res.trajectories[level], res.trajectories[level + 1]


def reference_sde(manifold, x0, E0, beta, path: BrownianPath, deep_level: int = 12):
    """Deep dyadic level used in place of the exact SDE."""
    return euler_murayama(manifold, x0, E0, beta, path, deep_level)


def _coords_input(noise: NoiseModel, eta, rng, batch, K):
    if eta is not None:
        return np.asarray(eta, float)
    if rng is None:
        raise ValueError("need eta or rng")
    return noise.draw(rng, batch + (K,))


def nongaussian_walk(manifold: Manifold, y0, beta: DriftField, noise: NoiseModel,
                     delta: float, K: int, eta=None, rng=None, E0=None) -> Trajectory:
    """``y_{k+1} = Exp_{y_k}(delta beta(y_k) + sqrt(delta) xi_k(y_k))``.

    ``eta`` holds the raw noise coordinates, shape ``(..., K, d)``; the frame
    is carried along each step.
    """
    y = np.asarray(y0, float)
    batch = y.shape[:-1] if eta is None else np.shape(eta)[:-2]
    y = np.broadcast_to(y, batch + (manifold.ambient,)).copy()
    E = manifold.frame(y) if E0 is None else np.broadcast_to(E0, batch + (manifold.dim, manifold.ambient)).copy()
    eta = _coords_input(noise, eta, rng, batch, K)
    sd = math.sqrt(delta)
    ps, fs = [y], [E]
    for k in range(K):
        c = noise.rotate(y, eta[..., k, :])
        yn = manifold.exp(y, delta * beta(y) + sd * manifold.from_coords(E, c), check=False)
        E = manifold.transported_frame(E, y, yn, strict=False)
        y = yn
        ps.append(y)
        fs.append(E)
    return Trajectory(delta * np.arange(K + 1), np.stack(ps, -2), np.stack(fs, -3), "nongaussian")


def tangent_walk(manifold: Manifold, y0, E0, beta: DriftField, noise: NoiseModel,
                 delta: float, K: int, eta=None, rng=None, partner: Optional[Trajectory] = None,
                 strict: bool = False):
    """Straight-line walk in ``T_{y0}``.

    ``z_{k+1} = z_k + delta beta(y0) + sqrt(delta) Gamma_{y~_k -> y0} xi_k(y~_k)``
    with ``y~_k = Exp_{y0}(z_k)``; the drift stays frozen at ``y0``.

    The noise frame at ``y~_k`` is the radial transport of ``E0`` unless a
    ``partner`` walk is given, in which case its frame at ``y_k`` is moved to
    ``y~_k``; this couples the two walks through one random field.
    Returns ``(z, trajectory)`` with ``z`` of shape ``(..., K+1, n)``.
    """
    y0 = np.asarray(y0, float)
    batch = y0.shape[:-1] if eta is None else np.shape(eta)[:-2]
    y0 = np.broadcast_to(y0, batch + (manifold.ambient,)).copy()
    E0 = np.broadcast_to(np.asarray(E0, float), batch + (manifold.dim, manifold.ambient)).copy()
    eta = _coords_input(noise, eta, rng, batch, K)
    b0 = beta(y0)
    sd = math.sqrt(delta)
    limit = getattr(manifold, "radius", 1.0) * (math.pi - 1e-6) if manifold.curvature and manifold.curvature > 0 else math.inf
    z = np.zeros_like(y0)
    yt = y0.copy()
    zs, ys = [z], [yt]
    for k in range(K):
        if partner is None:
            G = manifold.transported_frame(E0, y0, yt, strict=False)
        else:
            G = manifold.transported_frame(partner.frames[..., k, :, :],
                                           partner.points[..., k, :], yt, strict=False)
        xi = manifold.from_coords(G, noise.rotate(yt, eta[..., k, :]))
        z = z + delta * b0 + sd * manifold.transport(xi, yt, y0, strict=False)
        r = manifold.norm(y0, z)
        if np.any(r >= limit):
            if strict:
                raise CutLocusError("tangent walk left the injectivity radius")
            z = np.where((r >= limit)[..., None], np.nan, z)
        yt = manifold.exp(y0, z, check=False)
        zs.append(z)
        ys.append(yt)
    traj = Trajectory(delta * np.arange(K + 1), np.stack(ys, -2), None, "tangent")
    return np.stack(zs, -2), traj

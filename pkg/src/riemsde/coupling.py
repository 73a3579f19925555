"""Couplings of two geometric Euler-Murayama chains and the concave
distance reweighting that certifies their contraction."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .brownian import NoiseModel
from .geometry import Manifold

__all__ = [
    "LyapunovParams",
    "LyapunovFunction",
    "lyapunov_f",
    "synchronous_step",
    "synchronous_bound",
    "reflection_matrix",
    "reflection_step",
    "default_eps_reflect",
    "CoupledSeries",
    "coupled_run",
]


@dataclass(frozen=True)
class LyapunovParams:
    """``L = q + L_Ric``, radius ``R``, smoothing ``eps`` and (optionally) ``m``."""

    L: float
    R: float
    eps: float = 0.0
    m: Optional[float] = None

    def __post_init__(self):
        if self.L <= 0 or self.R <= 0 or self.eps < 0:
            raise ValueError("need L > 0, R > 0 and eps >= 0")
        if self.eps > 0 and self.eps > self.eps_max * (1 + 1e-12):
            raise ValueError(f"eps must not exceed {self.eps_max:.6g}")

    @classmethod
    def from_drift(cls, q: float, L_Ric: float, R: float, eps: float = 0.0, m=None):
        return cls(q + L_Ric, R, eps, m)

    @property
    def eps_max(self) -> float:
        return min(0.25, 1 / (4 * math.sqrt(self.L)), 1 / (4 * self.L * self.R))

    @property
    def alpha(self) -> float:
        if self.m is None:
            raise ValueError("alpha needs the dissipativity constant m")
        return min(self.m / 16, 1 / (2 * self.R ** 2)) * math.exp(-0.5 * self.L * self.R ** 2)

    @property
    def slope_floor(self) -> float:
        """``exp(-(1 + eps) L R^2 / 2) / 2``: lower bound for ``f'`` and ``f(r)/r``."""
        return 0.5 * math.exp(-(1 + self.eps) * self.L * self.R ** 2 / 2)


class LyapunovFunction:
    """``f_eps`` with first and second derivatives.

    ``psi = exp(-L int_0^r s mu(s) ds)`` is closed form. ``Psi = int psi``,
    ``I = int mu Psi / psi`` and ``int psi I`` are integrated together as an
    ODE on ``[0, R]`` and ``[R, R + eps]`` (``mu`` has kinks at both ends).
    Past ``R + eps`` everything is affine.
    """

    def __init__(self, params: LyapunovParams, rtol: float = 1e-12, atol: float = 1e-14):
        self.params = p = params
        self.r_flat = p.R + p.eps
        y = np.zeros(3)
        self._pieces = []
        for a, b in ((0.0, p.R), (p.R, self.r_flat)):
            if b <= a:
                continue
            sol = solve_ivp(self._rhs, (a, b), y, method="DOP853", rtol=rtol, atol=atol,
                            dense_output=True)
            if not sol.success:
                raise RuntimeError(sol.message)
            self._pieces.append((a, b, sol.sol))
            y = sol.y[:, -1]
        self.Psi_end, self.D, self.JI_end = y
        self.psi_end = float(self.psi(self.r_flat))
        self.f_end = self.Psi_end - self.JI_end / (2 * self.D)

    def mu(self, r):
        p = self.params
        r = np.asarray(r, float)
        if p.eps == 0:
            return np.where(r <= p.R, 1.0, 0.0)
        with np.errstate(over="ignore"):  # tiny eps: the ramp saturates to 0 or 1
            return np.clip(1 - (r - p.R) / p.eps, 0.0, 1.0)

    def _mu_integral(self, r):
        """``int_0^r s mu(s) ds``."""
        p = self.params
        r = np.asarray(r, float)
        inner = 0.5 * np.minimum(r, p.R) ** 2
        if p.eps == 0:
            return inner
        a = np.clip(r - p.R, 0.0, p.eps)
        ramp = p.R * a - p.R * a ** 2 / (2 * p.eps) + a ** 2 / 2 - a ** 3 / (3 * p.eps)
        return inner + ramp

    def psi(self, r):
        return np.exp(-self.params.L * self._mu_integral(r))

    def _rhs(self, r, y):
        psi = self.psi(r)
        return np.array([psi, self.mu(r) * y[0] / psi, psi * y[1]])

    def _state(self, r):
        r = np.asarray(r, float)
        out = np.empty(r.shape + (3,))
        flat = r >= self.r_flat
        for a, b, sol in self._pieces:
            m = (r >= a) & (r <= b) & ~flat
            if np.any(m):
                out[m] = sol(r[m]).T
        if np.any(flat):
            # mu = 0 beyond R + eps: Psi grows linearly, I is frozen at D
            s = r[flat] - self.r_flat
            Psi = self.Psi_end + self.psi_end * s
            JI = self.JI_end + self.psi_end * self.D * s
            out[flat] = np.stack([Psi, np.full_like(s, self.D), JI], -1)
        return out

    def __call__(self, r):
        r = np.asarray(r, float)
        if np.any(r < 0):
            raise ValueError("f is defined for r >= 0")
        st = self._state(r)
        return st[..., 0] - st[..., 2] / (2 * self.D)

    def nu(self, r):
        return 1 - self._state(r)[..., 1] / (2 * self.D)

    def df(self, r):
        return self.psi(r) * self.nu(r)

    def d2f(self, r):
        r = np.asarray(r, float)
        st = self._state(r)
        mu, psi = self.mu(r), self.psi(r)
        nu = 1 - st[..., 1] / (2 * self.D)
        return -self.params.L * mu * r * psi * nu - mu * st[..., 0] / (2 * self.D)


@functools.lru_cache(maxsize=32)
def _cached(params: LyapunovParams) -> LyapunovFunction:
    return LyapunovFunction(params)


def lyapunov_f(r, params: LyapunovParams):
    """``f_eps(r)``; the underlying quadrature is cached per parameter set."""
    return _cached(params)(r)


# --------------------------------------------------------------------------
# synchronous coupling


def synchronous_step(manifold: Manifold, x, Ex, y, beta, delta: float, eta):
    """Both chains use the same frame coordinates ``eta``; the frame at ``y``
    is ``Ex`` transported along the geodesic from ``x``.

    Returns ``(x', Ex', y')``.
    """
    sd = math.sqrt(delta)
    Ey = manifold.transported_frame(Ex, x, y, strict=False)
    u = delta * beta(x) + sd * manifold.from_coords(Ex, eta)
    v = delta * beta(y) + sd * manifold.from_coords(Ey, eta)
    xn = manifold.exp(x, u, check=False)
    yn = manifold.exp(y, v, check=False)
    return xn, manifold.transported_frame(Ex, x, xn, strict=False), yn


def synchronous_bound(manifold: Manifold, x, y, u, v):
    """``(lhs, rhs)`` of the one-step distance inequality for ``u`` at ``x``
    and ``v`` at ``y``; ``lhs = d(Exp_x u, Exp_y v)^2``."""
    lhs = manifold.distance(manifold.exp(x, u), manifold.exp(y, v)) ** 2
    L_R = manifold.bounds().L_R
    C = math.sqrt(L_R) * (manifold.norm(x, u) + manifold.norm(y, v))
    w = manifold.transport(v, y, x) - u
    d0 = manifold.distance(x, y)
    rhs = ((1 + 4 * C ** 2 * np.exp(4 * C)) * d0 ** 2 + 32 * np.exp(C) * manifold.norm(x, w) ** 2
           + 2 * manifold.inner(x, manifold.log(x, y), w))
    return lhs, rhs


# --------------------------------------------------------------------------
# reflection coupling


def default_eps_reflect(delta: float, dim: int) -> float:
    return 1e-3 * math.sqrt(delta * dim)


def _direction_at_y(manifold, x, y, eps_reflect):
    """Unit velocity at ``y`` of the geodesic from ``x``; zero when close."""
    w = -manifold.log(y, x, strict=False)
    d = manifold.norm(y, w)
    far = d > eps_reflect
    nu = np.where(far[..., None], w / np.where(far, d, 1.0)[..., None], 0.0)
    return nu, far


def reflection_matrix(manifold: Manifold, x, Ex, y, Ey, eps_reflect: float):
    """``M^T (I - 2 nu nu^T)`` mapping x-noise coordinates to y-noise coordinates.

    ``M_ab = <F^a, Ey^b>`` with ``F`` the frame ``Ex`` transported to ``y``
    and ``nu`` the coordinates of the unit connecting direction in ``F``.
    """
    F = manifold.transported_frame(Ex, x, y, strict=False)
    nu_t, _ = _direction_at_y(manifold, x, y, eps_reflect)
    M = manifold.inner(y[..., None, None, :], F[..., :, None, :], Ey[..., None, :, :])
    nu = manifold.coords(y, F, nu_t)
    refl = np.eye(manifold.dim) - 2 * nu[..., :, None] * nu[..., None, :]
    return np.swapaxes(M, -1, -2) @ refl


def reflection_step(manifold: Manifold, x, Ex, y, Ey, beta, delta: float, eta,
                    eps_reflect: Optional[float] = None):
    """Mirror the transported x-noise across the hyperplane orthogonal to the
    connecting geodesic at ``y``; plain transport when ``d(x, y) <= eps_reflect``.

    Returns ``(x', Ex', y', Ey', reflected)``.
    """
    eps_reflect = default_eps_reflect(delta, manifold.dim) if eps_reflect is None else eps_reflect
    sd = math.sqrt(delta)
    xi = sd * manifold.from_coords(Ex, eta)
    g = manifold.transport(xi, x, y, strict=False)
    nu, far = _direction_at_y(manifold, x, y, eps_reflect)
    xi_y = g - 2 * manifold.inner(y, nu, g)[..., None] * nu
    xn = manifold.exp(x, delta * beta(x) + xi, check=False)
    yn = manifold.exp(y, delta * beta(y) + xi_y, check=False)
    Exn = manifold.transported_frame(Ex, x, xn, strict=False)
    Eyn = manifold.transported_frame(Ey, y, yn, strict=False)
    return xn, Exn, yn, Eyn, far


@dataclass
class CoupledSeries:
    d: np.ndarray  # (..., K+1)
    f: Optional[np.ndarray]  # (..., K+1)
    reflected: np.ndarray  # (..., K) bool
    mode: str

    @property
    def aborted(self) -> np.ndarray:
        return ~np.all(np.isfinite(self.d), axis=-1)


def coupled_run(manifold: Manifold, x0, y0, beta, delta: float, K: int, mode: str = "reflect",
                eta=None, rng=None, noise: Optional[NoiseModel] = None,
                lyapunov: Optional[LyapunovFunction] = None, eps_reflect: Optional[float] = None,
                Ex0=None, Ey0=None) -> CoupledSeries:
    """Run ``K`` coupled steps and record ``d_k`` (and ``f(d_k)``)."""
    if mode not in ("sync", "reflect"):
        raise ValueError(f"unknown coupling mode {mode!r}")
    x = np.asarray(x0, float)
    y = np.asarray(y0, float)
    if eta is None:
        if rng is None:
            raise ValueError("need eta or rng")
        noise = noise or NoiseModel("gaussian", manifold.dim)
        batch = np.broadcast_shapes(x.shape, y.shape)[:-1]
        eta = noise.draw(rng, batch + (K,))
    eta = np.asarray(eta, float)
    batch = eta.shape[:-2]
    x = np.broadcast_to(x, batch + x.shape[-1:]).copy()
    y = np.broadcast_to(y, batch + y.shape[-1:]).copy()
    Ex = manifold.frame(x) if Ex0 is None else np.broadcast_to(Ex0, batch + (manifold.dim, manifold.ambient)).copy()
    Ey = manifold.frame(y) if Ey0 is None else np.broadcast_to(Ey0, batch + (manifold.dim, manifold.ambient)).copy()
    ds = [manifold.distance(x, y)]
    refl = []
    for k in range(K):
        if mode == "sync":
            x, Ex, y = synchronous_step(manifold, x, Ex, y, beta, delta, eta[..., k, :])
            refl.append(np.zeros(batch, bool))
        else:
            x, Ex, y, Ey, far = reflection_step(manifold, x, Ex, y, Ey, beta, delta,
                                                eta[..., k, :], eps_reflect)
            refl.append(far)
        ds.append(manifold.distance(x, y))
    d = np.stack(ds, -1)
    f = None
    if lyapunov is not None:
        f = np.full_like(d, np.nan)
        ok = np.isfinite(d)
        f[ok] = lyapunov(d[ok])
    return CoupledSeries(d, f, np.stack(refl, -1) if refl else np.zeros(batch + (0,), bool), mode)

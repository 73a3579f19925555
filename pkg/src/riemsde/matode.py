"""Time-ordered matrix exponentials and linear inhomogeneous ODEs.

Everything here is a fixed-step classical Runge-Kutta (RK4) integration.
Arrays may carry leading batch dimensions: a path may return matrices of
shape ``(..., n, n)`` and every solver broadcasts over them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "NumericalBlowup",
    "MatrixPath",
    "default_step",
    "rk4",
    "matrix_exponent_ode",
    "matrix_exponent_grid",
    "solve_inhomogeneous",
    "second_order_blocks",
    "second_order_blocks_grid",
    "stacked_generator",
    "constant_step_map",
    "block_envelopes",
]


class NumericalBlowup(FloatingPointError):
    """Raised when an integration produces non-finite values."""

    def __init__(self, time: float, what: str = "state"):
        super().__init__(f"non-finite {what} at t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class MatrixPath:
    """A matrix-valued function of time on ``[0, t_max]``.

    ``constant=True`` promises ``eval(t)`` does not depend on ``t``; solvers
    then evaluate it once and raise the RK4 step map to a power, which is the
    same arithmetic as stepping.
    """

    dim: int
    eval: Callable[[float], np.ndarray]
    t_max: float = math.inf
    norm_bound: Optional[float] = None
    lipschitz: Optional[float] = None
    constant: bool = False

    @classmethod
    def from_constant(cls, M, norm_bound=None) -> "MatrixPath":
        M = np.asarray(M, dtype=float)
        return cls(dim=M.shape[-1], eval=lambda t: M, norm_bound=norm_bound,
                   lipschitz=0.0, constant=True)

    def __call__(self, t: float) -> np.ndarray:
        return self.eval(t)

    def shifted(self, s: float) -> "MatrixPath":
        """The path ``t -> M(s + t)``."""
        if self.constant:
            return self
        f = self.eval
        return MatrixPath(self.dim, lambda t: f(s + t), self.t_max - s,
                          self.norm_bound, self.lipschitz, False)

    def spot_check(self, ts) -> None:
        """Assert finiteness and the declared norm bound at sample times."""
        for t in np.atleast_1d(ts):
            m = np.asarray(self.eval(float(t)))
            if not np.all(np.isfinite(m)):
                raise NumericalBlowup(float(t), "path value")
            if self.norm_bound is not None:
                nrm = np.linalg.norm(m, ord=2, axis=(-2, -1))
                if np.any(nrm > self.norm_bound * (1 + 1e-12) + 1e-15):
                    raise ValueError(f"norm bound violated at t={t}")


def default_step(t: float) -> float:
    """``1e-3 * t``, never fewer than 64 steps."""
    return min(1e-3 * t, t / 64.0) if t > 0 else 1.0


def _steps(t: float, h: float) -> list[float]:
    if t < 0 or h <= 0:
        raise ValueError("need t >= 0 and h > 0")
    n = int(math.floor(t / h * (1 + 1e-12)))
    steps = [h] * n
    rem = t - n * h
    if rem > 1e-14 * max(t, 1.0):
        steps.append(rem)
    return steps


def _check(y, t):
    if not np.all(np.isfinite(y)):
        raise NumericalBlowup(t)


def rk4(f: Callable, y0, t: float, h: Optional[float] = None, t0: float = 0.0):
    """Integrate ``y' = f(s, y)`` from ``t0`` to ``t0 + t`` with RK4.

    Full steps of size ``h``; the last step is shortened to land on ``t``.
    """
    h = default_step(t) if h is None else h
    y = np.array(y0, dtype=float)
    s = t0
    for dt in _steps(t, h):
        k1 = f(s, y)
        k2 = f(s + dt / 2, y + dt / 2 * k1)
        k3 = f(s + dt / 2, y + dt / 2 * k2)
        k4 = f(s + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += dt
        _check(y, s)
    return y


def _rk4_linear_map(A, dt):
    """One RK4 step of ``y' = A y`` as a matrix: the degree-4 Taylor polynomial."""
    n = A.shape[-1]
    X = dt * A
    X2 = X @ X
    eye = np.broadcast_to(np.eye(n), A.shape)
    return eye + X + X2 / 2 + X2 @ X / 6 + X2 @ X2 / 24


def _constant_power(A, t, h):
    steps = _steps(t, h)
    n = A.shape[-1]
    out = np.broadcast_to(np.eye(n), A.shape).copy()
    if not steps:
        return out
    nfull = len(steps) - (1 if steps[-1] != h else 0)
    if nfull:
        out = np.linalg.matrix_power(_rk4_linear_map(A, h), nfull)
    if steps[-1] != h:
        out = _rk4_linear_map(A, steps[-1]) @ out
    _check(out, t)
    return out


def constant_step_map(M: MatrixPath, dt: float, n: int = 1):
    """``n`` RK4 steps of size ``dt`` for a constant path, as one matrix."""
    if not M.constant:
        raise ValueError("step map requires a constant path")
    return np.linalg.matrix_power(_rk4_linear_map(np.asarray(M.eval(0.0), float), dt), n)


def matrix_exponent_ode(M: MatrixPath, t: float, h: Optional[float] = None):
    """Solve ``E' = M(s) E``, ``E(0) = I`` and return ``E(t)``."""
    h = default_step(t) if h is None else h
    if M.constant:
        return _constant_power(np.asarray(M.eval(0.0), float), t, h)
    M0 = np.asarray(M.eval(0.0), float)
    eye = np.broadcast_to(np.eye(M.dim), M0.shape).copy()
    return rk4(lambda s, E: M.eval(s) @ E, eye, t, h)


def matrix_exponent_grid(M: MatrixPath, ts, h: Optional[float] = None):
    """``E(t_j)`` for an increasing grid ``ts`` starting at 0.

    Each interval is split into equal substeps no longer than ``h``.
    Returns an array with the grid index first.
    """
    ts = np.asarray(ts, float)
    if ts[0] != 0.0 or np.any(np.diff(ts) <= 0):
        raise ValueError("grid must start at 0 and increase")
    h = default_step(ts[-1]) if h is None else h
    M0 = np.asarray(M.eval(0.0), float)
    E = np.broadcast_to(np.eye(M.dim), M0.shape).copy()
    out = np.empty((len(ts),) + E.shape)
    out[0] = E
    cache = {}
    for j, (a, b) in enumerate(zip(ts[:-1], ts[1:]), start=1):
        n = max(1, int(math.ceil((b - a) / h - 1e-9)))
        dt = (b - a) / n
        if M.constant:
            key = (n, dt)
            if key not in cache:
                cache[key] = np.linalg.matrix_power(_rk4_linear_map(M0, dt), n)
            E = cache[key] @ E
        else:
            s = a
            for _ in range(n):
                k1 = M.eval(s) @ E
                k2 = M.eval(s + dt / 2) @ (E + dt / 2 * k1)
                k3 = M.eval(s + dt / 2) @ (E + dt / 2 * k2)
                k4 = M.eval(s + dt) @ (E + dt * k3)
                E = E + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                s += dt
            _check(E, b)
        out[j] = E
    if M.constant:
        _check(E, ts[-1])
    return out


def solve_inhomogeneous(M: MatrixPath, v: Callable, t: float, z0,
                        h: Optional[float] = None):
    """Solve ``z' = M(s) z + v(s)`` from ``z(0) = z0`` and return ``z(t)``."""
    def rhs(s, z):
        return np.einsum("...ij,...j->...i", M.eval(s), z) + v(s)

    return rk4(rhs, z0, t, h)


def stacked_generator(M: MatrixPath) -> MatrixPath:
    """The path ``[[0, I], [M(t), 0]]`` of doubled dimension."""
    d = M.dim

    def ev(t):
        m = np.asarray(M.eval(t), float)
        out = np.zeros(m.shape[:-2] + (2 * d, 2 * d))
        out[..., :d, d:] = np.eye(d)
        out[..., d:, :d] = m
        return out

    nb = None if M.norm_bound is None else max(1.0, M.norm_bound)
    return MatrixPath(2 * d, ev, M.t_max, nb, M.lipschitz, M.constant)


def _split(E, d):
    return E[..., :d, :d], E[..., :d, d:], E[..., d:, :d], E[..., d:, d:]


def second_order_blocks(M: MatrixPath, t: float, h: Optional[float] = None):
    """Blocks ``(A, B, C, D)`` of the exponent of ``[[0, I], [M, 0]]`` at ``t``.

    For ``J'' = M J`` this gives ``J(t) = A J(0) + B J'(0)`` and
    ``J'(t) = C J(0) + D J'(0)``.
    """
    E = matrix_exponent_ode(stacked_generator(M), t, h)
    return _split(E, M.dim)


def second_order_blocks_grid(M: MatrixPath, ts, h: Optional[float] = None):
    """Blocks ``(A, B, C, D)`` at every grid time; grid index first."""
    E = matrix_exponent_grid(stacked_generator(M), ts, h)
    return _split(E, M.dim)


def block_envelopes(L_M: float, t):
    """cosh/sinh envelopes for the blocks of a path with ``||M(t)||_2 <= L_M``.

    Keys: ``A``, ``B``, ``C``, ``D``, ``A-I``, ``B-tI``.
    """
    t = np.asarray(t, float)
    s = math.sqrt(L_M)
    ch = np.cosh(s * t)
    sh_over = t if s == 0 else np.sinh(s * t) / s
    return {
        "A": ch,
        "B": sh_over,
        "C": s * np.sinh(s * t),
        "D": ch,
        "A-I": ch - 1,
        "B-tI": sh_over - t,
    }

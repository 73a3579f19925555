"""Estimators for the Monte Carlo experiments: rate fits, two-sample and
normality statistics, and tail envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

__all__ = [
    "RateFit",
    "fit_rate",
    "mean_se",
    "series_summary",
    "energy_distance",
    "permutation_test",
    "ks_per_coordinate",
    "covariance_deviation",
    "CLTReport",
    "clt_probe",
    "l2_dissipative_envelope",
    "subgaussian_lipschitz_envelope",
    "subgaussian_dissipative_envelope",
    "TailReport",
    "tail_probe",
]


def mean_se(x, axis=0):
    """Mean and standard error over finite entries."""
    x = np.asarray(x, float)
    ok = np.isfinite(x)
    n = ok.sum(axis=axis)
    xs = np.where(ok, x, 0.0)
    m = xs.sum(axis=axis) / n
    dev = np.where(ok, x - np.expand_dims(m, axis), 0.0)
    var = (dev ** 2).sum(axis=axis) / np.maximum(n - 1, 1)
    return m, np.sqrt(var / n)


def series_summary(series):
    """Per-step mean and standard error of a ``(replicas, steps)`` array."""
    return mean_se(series, axis=0)


@dataclass
class RateFit:
    points: list  # (scale, mean, se)
    slope: float
    intercept: float
    halfwidth: float

    def predict(self, scale):
        return math.exp(self.intercept) * np.asarray(scale, float) ** self.slope


def fit_rate(points: Sequence) -> RateFit:
    """Least squares of ``log mean`` on ``log scale``.

    ``points`` holds ``(scale, mean)`` or ``(scale, mean, se)``; the
    half-width is the 95% t-interval of the slope.
    """
    pts = [tuple(p) + (math.nan,) * (3 - len(p)) for p in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    pts.sort(key=lambda p: -p[0])
    s = np.array([p[0] for p in pts], float)
    m = np.array([p[1] for p in pts], float)
    if np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise ValueError("scales must be positive and distinct")
    if np.any(~(m > 0)):
        raise ValueError("means must be positive")
    X, Y = np.log(s), np.log(m)
    res = stats.linregress(X, Y)
    if not math.isfinite(res.slope):
        raise ValueError("slope is not finite")
    n = len(pts)
    hw = stats.t.ppf(0.975, n - 2) * res.stderr if n > 2 else math.inf
    return RateFit(pts, float(res.slope), float(res.intercept), float(hw))


# --------------------------------------------------------------------------
# two-sample statistics


def _mean_pairwise(A, B, chunk=2048):
    total = 0.0
    for i in range(0, len(A), chunk):
        total += cdist(A[i:i + chunk], B).sum()
    return total / (len(A) * len(B))


def energy_distance(A, B) -> float:
    """``2 E|X - Y| - E|X - X'| - E|Y - Y'|`` with all pairs (V-statistic).

    Non-negative, symmetric, and zero when the samples agree as multisets.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if A.shape[0] == 1 and A.shape[1] != B.shape[1]:
        A = A.T
    if B.shape[0] == 1 and B.shape[1] != A.shape[1]:
        B = B.T
    return float(2 * _mean_pairwise(A, B) - _mean_pairwise(A, A) - _mean_pairwise(B, B))


def permutation_test(A, B, n_perm: int = 200, seed: int = 0):
    """``(statistic, p-value)`` of the energy distance under label permutation."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    obs = energy_distance(A, B)
    pool = np.concatenate([A, B])
    rng = np.random.default_rng(seed)
    n = len(A)
    hits = 0
    for _ in range(n_perm):
        idx = rng.permutation(len(pool))
        if energy_distance(pool[idx[:n]], pool[idx[n:]]) >= obs:
            hits += 1
    return obs, (hits + 1) / (n_perm + 1)


def ks_per_coordinate(samples, mean=0.0, scale=1.0) -> np.ndarray:
    """Kolmogorov-Smirnov distance of each coordinate to ``N(mean, scale^2)``."""
    X = np.asarray(samples, float)
    X = X[np.all(np.isfinite(X), axis=-1)]
    return np.array([stats.kstest((X[:, j] - mean) / scale, "norm").statistic
                     for j in range(X.shape[1])])


def covariance_deviation(samples, target):
    """``(sample covariance, max |cov - target| / se)`` with entrywise standard errors."""
    X = np.asarray(samples, float)
    X = X[np.all(np.isfinite(X), axis=-1)]
    n = len(X)
    C = X - X.mean(0)
    cov = C.T @ C / (n - 1)
    prod = C[:, :, None] * C[:, None, :]
    se = prod.std(0, ddof=1) / math.sqrt(n)
    z = np.abs(cov - np.asarray(target, float)) / np.where(se > 0, se, np.inf)
    return cov, float(z.max())


@dataclass
class CLTReport:
    ks_mean: float
    ks_max: float
    energy: float
    cov_z: float
    n: int


def clt_probe(coords, scale_time: float, shift=None, energy_samples: int = 2000,
              seed: int = 0) -> CLTReport:
    """Compare ``(z - shift) / sqrt(K delta)`` with ``N(0, I)``.

    ``coords`` are frame coordinates, shape ``(n, d)``. The headline
    statistic is the mean per-coordinate KS distance; an energy distance on a
    subsample against fresh Gaussian draws is reported alongside.
    """
    Z = np.asarray(coords, float)
    if shift is not None:
        Z = Z - np.asarray(shift, float)
    Z = Z / math.sqrt(scale_time)
    Z = Z[np.all(np.isfinite(Z), axis=-1)]
    ks = ks_per_coordinate(Z)
    rng = np.random.default_rng(seed)
    m = min(energy_samples, len(Z))
    ref = rng.standard_normal((m, Z.shape[1]))
    e = energy_distance(Z[:m], ref)
    _, cz = covariance_deviation(Z, np.eye(Z.shape[1]))
    return CLTReport(float(ks.mean()), float(ks.max()), e, cz, len(Z))


# --------------------------------------------------------------------------
# tail envelopes


def l2_dissipative_envelope(k, delta, m, L_R, L_beta_prime, R, d0_sq_mean, noise_fourth):
    """Second-moment envelope of ``d(x_k, x*)^2`` for a dissipative walk.

    ``noise_fourth`` bounds ``E||xi||^4``: ``d(d+2)`` for Gaussian noise and
    ``L_xi^4`` for noise bounded by ``L_xi``.
    """
    k = np.asarray(k, float)
    c = 2048 * delta * L_R * L_beta_prime ** 4 * noise_fourth / m ** 5 + 4 * delta * L_beta_prime * R ** 2
    return np.exp(-k * delta * m) * d0_sq_mean + (1 - (1 - delta * m) ** k) / (delta * m) * c


def subgaussian_lipschitz_envelope(t, K, delta, L_beta, L_xi):
    """Bound on ``P(max_k d(x_k, x_0) >= t)`` for bounded noise and drift."""
    t = np.asarray(t, float)
    Kd = K * delta
    return np.exp((32 * Kd ** 2 * L_beta ** 2 + 8 * Kd * L_xi ** 2 - t ** 2) / (128 * Kd * L_xi ** 2))


def subgaussian_dissipative_envelope(r, K, delta, m, R, L_R, scale):
    """Bound on ``P(max_k d(x_k, x*) >= r)`` at fixed step size.

    ``scale`` is the dimension for Gaussian noise and ``L_xi^2`` for bounded noise.
    """
    r = np.asarray(r, float)
    return 32 * K * delta * m * np.exp(m * R ** 2 / scale + 2 * L_R * scale / m - m * r ** 2 / (32 * scale))


@dataclass
class TailReport:
    thresholds: np.ndarray
    empirical: np.ndarray
    envelope: np.ndarray
    rms: float
    n: int
    passed: np.ndarray = field(init=False)

    def __post_init__(self):
        self.passed = self.empirical <= self.envelope


def tail_probe(distances, multiples=(2.0, 3.0), envelope: Optional[Callable] = None,
               statistic: str = "max") -> TailReport:
    """Exceedance of ``t = c * RMS`` for each multiple ``c`` against ``envelope(t)``.

    ``distances`` has shape ``(replicas, steps)``; ``statistic`` picks the
    running maximum or the terminal value per replica.
    """
    D = np.asarray(distances, float)
    D = D[np.all(np.isfinite(D), axis=-1)]
    if statistic == "max":
        s = D.max(axis=-1)
    elif statistic == "terminal":
        s = D[..., -1]
    else:
        raise ValueError(f"unknown statistic {statistic!r}")
    rms = float(np.sqrt(np.mean(s ** 2)))
    t = rms * np.asarray(multiples, float)
    emp = np.array([np.mean(s >= ti) for ti in t])
    env = np.asarray(envelope(t), float) if envelope is not None else np.ones_like(t)
    return TailReport(t, emp, env, rms, len(s))

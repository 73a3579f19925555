"""Dyadic Brownian paths and identity-covariance noise models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = ["BrownianPath", "NoiseModel", "replica_rng", "sample_noise"]

NOISE_KINDS = ("gaussian", "rademacher", "scaled-sphere")


def replica_rng(seed: int, replica: int, *key: int) -> np.random.Generator:
    """Independent generator for one replica; ``key`` separates sub-experiments."""
    return np.random.default_rng([int(seed), *map(int, key), int(replica)])


class BrownianPath:
    """Gaussian increments of ``B`` on a dyadic grid of ``[0, T]``.

    The finest level ``i_max`` is stored; every coarser level is the pairwise
    sum of its children, so ``level(i)[k] == level(i+1)[2k] + level(i+1)[2k+1]``
    holds exactly. Leading batch dimensions (replicas) are allowed.
    """

    def __init__(self, T: float, i_max: int, finest: np.ndarray, seed=None):
        finest = np.asarray(finest, float)
        if finest.shape[-2] != 2 ** i_max:
            raise ValueError("finest level must hold 2**i_max increments")
        self.T = float(T)
        self.i_max = int(i_max)
        self.dim = finest.shape[-1]
        self.seed = seed
        levels = [finest]
        for _ in range(i_max):
            f = levels[-1]
            levels.append(f[..., 0::2, :] + f[..., 1::2, :])
        self._levels = levels[::-1]

    @classmethod
    def generate(cls, T: float, i_max: int, dim: int, seed: int,
                 replicas: Optional[Sequence[int]] = None, key: Sequence[int] = ()):
        """Draw one path per replica index (or a single path if ``replicas`` is None)."""
        scale = math.sqrt(T / 2 ** i_max)
        ids = [0] if replicas is None else list(replicas)
        draws = [replica_rng(seed, r, *key).standard_normal((2 ** i_max, dim)) * scale
                 for r in ids]
        finest = draws[0] if replicas is None else np.stack(draws)
        return cls(T, i_max, finest, seed)

    def delta(self, i: int) -> float:
        return self.T / 2 ** i

    def level(self, i: int) -> np.ndarray:
        """All level-``i`` increments, shape ``(..., 2**i, d)``."""
        if not 0 <= i <= self.i_max:
            raise IndexError(f"level {i} outside [0, {self.i_max}]")
        return self._levels[i]

    def sample_increment(self, i: int, k: int) -> np.ndarray:
        """``B((k+1) delta_i) - B(k delta_i)``."""
        if not 0 <= k < 2 ** i:
            raise IndexError(f"index {k} outside level {i}")
        return self.level(i)[..., k, :]

    def values(self, i: int) -> np.ndarray:
        """``B`` at the level-``i`` nodes, including ``B(0) = 0``."""
        inc = self.level(i)
        zero = np.zeros(inc.shape[:-2] + (1, self.dim))
        return np.concatenate([zero, np.cumsum(inc, axis=-2)], axis=-2)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean, identity-covariance increments in an orthonormal frame.

    ``theta0 != 0`` makes the law position dependent: the coordinates are
    rotated by ``theta0 * sin(<x, w>)`` in the frame plane ``plane``, with
    ``w`` the normalized all-ones vector unless given.
    """

    kind: str = "gaussian"
    dim: int = 2
    theta0: float = 0.0
    plane: tuple = (0, 1)
    direction: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def bound(self) -> float:
        return math.inf if self.kind == "gaussian" else math.sqrt(self.dim)

    def draw(self, rng: np.random.Generator, shape=()) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        d = self.dim
        if self.kind == "gaussian":
            return rng.standard_normal(shape + (d,))
        if self.kind == "rademacher":
            return rng.integers(0, 2, size=shape + (d,)) * 2.0 - 1.0
        g = rng.standard_normal(shape + (d,))
        return math.sqrt(d) * g / np.linalg.norm(g, axis=-1, keepdims=True)

    def draw_stream(self, seed: int, replicas: Sequence[int], K: int, key=()) -> np.ndarray:
        """``(len(replicas), K, d)`` coordinates, one generator per replica."""
        return np.stack([self.draw(replica_rng(seed, r, *key), (K,)) for r in replicas])

    def angle(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.direction is None:
            w = np.ones(x.shape[-1]) / math.sqrt(x.shape[-1])
        else:
            w = np.asarray(self.direction, float)
        return self.theta0 * np.sin(x @ w)

    def rotate(self, x, coords) -> np.ndarray:
        if self.theta0 == 0.0 or self.dim < 2:
            return coords
        a = self.angle(x)
        c, s = np.cos(a), np.sin(a)
        p, q = self.plane
        out = np.array(coords, dtype=float, copy=True)
        out[..., p] = c * coords[..., p] - s * coords[..., q]
        out[..., q] = s * coords[..., p] + c * coords[..., q]
        return out


def sample_noise(model: NoiseModel, x, E, rng_or_coords) -> np.ndarray:
    """Tangent ``xi(x) = (rotated coordinates) o E``.

    ``rng_or_coords`` is a generator or pre-drawn raw coordinates.
    """
    if isinstance(rng_or_coords, np.random.Generator):
        coords = model.draw(rng_or_coords, np.shape(x)[:-1])
    else:
        coords = np.asarray(rng_or_coords, float)
    return np.einsum("...i,...in->...n", model.rotate(x, coords), E)

"""Stable elementary numerics, deterministic randomness, and gradient checking.

All computation in this package is float64.  Randomness goes through `Rng`,
a thin wrapper over a counter-seeded PCG64 stream, so that a (seed,
algorithm) pair reproduces bit-identical draws on every platform.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels

RNG_ALGORITHM = "pcg64"


class DomainError(ValueError):
    """Input outside an operation's documented domain."""


class ConfigError(ValueError):
    """Inconsistent dimensions or invalid configuration."""


def logsumexp(v: Sequence[float] | np.ndarray, axis: int | None = None) -> float | np.ndarray:
    """log(sum(exp(v))), computed by subtracting the max first.

    With `axis=None`, `v` must be a non-empty finite vector and a scalar is
    returned; with an integer axis, reduces an array along that axis.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise DomainError("logsumexp of an empty vector")
    if not np.all(np.isfinite(arr)):
        raise DomainError("logsumexp requires finite entries")
    if axis is None:
        if arr.ndim != 1:
            arr = arr.ravel()
        return float(kernels.logsumexp_last(arr[None, :])[0])
    moved = np.moveaxis(arr, axis, -1)
    return kernels.logsumexp_last(np.ascontiguousarray(moved))


def cosine(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity <x,y>/(|x||y|), clamped to [-1, 1] against rounding."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise DomainError(f"cosine: shape mismatch {xa.shape} vs {ya.shape}")
    nx = float(np.linalg.norm(xa))
    ny = float(np.linalg.norm(ya))
    if nx == 0.0 or ny == 0.0:
        raise DomainError("cosine of a zero-norm vector")
    return float(np.clip(np.dot(xa.ravel(), ya.ravel()) / (nx * ny), -1.0, 1.0))


class Rng:
    """Deterministic random stream: same (seed, algorithm) => same draws.

    Instances are not thread-safe; use `substream` to derive independent
    child streams for parallel work.
    """

    def __init__(self, seed: int, algorithm: str = RNG_ALGORITHM, _key: tuple[int, ...] = ()):
        if algorithm != RNG_ALGORITHM:
            raise ConfigError(f"unknown rng algorithm {algorithm!r}")
        self.seed = int(seed)
        self.algorithm = algorithm
        self._key = _key
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_key)))

    def substream(self, index: int) -> "Rng":
        """Independent child stream; deterministic in (seed, path of indices)."""
        return Rng(self.seed, self.algorithm, self._key + (int(index),))

    def normal(self, shape: tuple[int, ...] | int, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def uniform(self, shape: tuple[int, ...] | int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def shuffled(self, n: int) -> np.ndarray:
        """A shuffled arange(n)."""
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size: int | None = None):
        return self._gen.integers(low, high, size=size)


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    p: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Max relative error between f's analytic gradient and central differences.

    `f(p)` must return `(value, gradient)`.  Error per coordinate is
    |analytic - fd| / max(1, |fd|); the max over coordinates is returned.
    Raises DomainError naming the offending index if any probe is non-finite.
    """
    p = np.asarray(p, dtype=np.float64)
    _, analytic = f(p)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != p.shape:
        raise ConfigError(f"gradient shape {analytic.shape} != parameter shape {p.shape}")
    worst = 0.0
    for i in range(p.size):
        step = np.zeros_like(p)
        step.flat[i] = eps
        f_plus, _ = f(p + step)
        f_minus, _ = f(p - step)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DomainError(f"non-finite objective at probe index {i}")
        fd = (f_plus - f_minus) / (2.0 * eps)
        err = abs(float(analytic.flat[i]) - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst


def assert_finite(name: str, arr: np.ndarray) -> np.ndarray:
    """Raise DomainError when an array holds NaN/Inf; returns it otherwise."""
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr

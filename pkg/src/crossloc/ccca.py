"""Cascaded cross-attention cosine alignment between a text descriptor group
and an image descriptor group.

Candidate orderings of the image group are scored with a parameter-free
similarity: row-wise cosines between the two groups plus cosines against a
stack of cross-attention layers fused from them.  Scoring variants drop one
term each ("no_cascade": direct cosine only; "no_cosine": fused terms only).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import DomainError, assert_finite

VARIANTS = ("full", "no_cascade", "no_cosine")


@dataclass
class ViewGroup:
    """Up to four unit-norm descriptor rows in view-slot order."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or not (1 <= self.rows.shape[0] <= 4):
            raise DomainError("a view group holds 1-4 descriptor rows")
        assert_finite("view group", self.rows)
        norms = np.linalg.norm(self.rows, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DomainError("view group rows must be unit norm")

    @property
    def size(self) -> int:
        return self.rows.shape[0]


@dataclass
class Alignment:
    """Winning candidate ordering with its score and the full candidate list."""

    permutation: tuple[int, ...]
    score: float
    candidates: list[tuple[tuple[int, ...], float]]


def cross_attention(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention: rows of `a` query rows of `b` (keys and
    values).  Output rows are convex combinations of b's rows."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise DomainError(f"cross_attention shape mismatch: {a.shape} vs {b.shape}")
    weights = kernels.softmax_last(a @ b.T / math.sqrt(a.shape[1]))
    return weights @ b


def cascaded_fuse(m: np.ndarray, q: np.ndarray, depth: int = 2) -> np.ndarray:
    """Stacked cross-attention: the first layer queries with `m` against `q`;
    each later layer queries with `q` against the previous output.  Rows of
    the result are L2-normalized."""
    if depth < 1:
        raise DomainError("cascade depth must be >= 1")
    h = cross_attention(m, q)
    for _ in range(depth - 1):
        h = cross_attention(q, h)
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def _row_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = np.sum(a * b, axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return np.clip(num / den, -1.0, 1.0)


def ccca_similarity(m: ViewGroup | np.ndarray, q: ViewGroup | np.ndarray,
                    depth: int = 2, variant: str = "full") -> float:
    """Mean over view rows of cos(q, h) + cos(q, m) + cos(m, h) where h is the
    cascade-fused stack; lies in [-3, 3]."""
    if variant not in VARIANTS:
        raise DomainError(f"unknown scoring variant {variant!r}")
    mr = m.rows if isinstance(m, ViewGroup) else np.atleast_2d(m)
    qr = q.rows if isinstance(q, ViewGroup) else np.atleast_2d(q)
    if mr.shape != qr.shape:
        raise DomainError("groups must share shape")
    if variant == "no_cascade":
        return float(np.mean(_row_cosines(qr, mr)))
    h = cascaded_fuse(mr, qr, depth)
    terms = _row_cosines(qr, h) + _row_cosines(mr, h)
    if variant == "full":
        terms = terms + _row_cosines(qr, mr)
    return float(np.mean(terms))


def _candidates(v: int, mode: str) -> list[tuple[int, ...]]:
    if mode == "full":
        if v > 4:
            raise DomainError("full permutation search is limited to 4 views")
        return list(itertools.permutations(range(v)))
    if mode == "cyclic":
        return [tuple((i + r) % v for i in range(v)) for r in range(v)]
    raise DomainError(f"unknown search mode {mode!r}")


def align(m: ViewGroup, q: ViewGroup, mode: str = "full",
          depth: int = 2, variant: str = "full") -> Alignment:
    """Search orderings of `q` (all permutations, or rotations in "cyclic"
    mode) for the one scoring highest against `m`; ties go to the
    lexicographically smallest permutation."""
    if m.size != q.size:
        raise DomainError("groups must have equal view counts")
    best_perm: tuple[int, ...] | None = None
    best_score = -math.inf
    scored = []
    for perm in _candidates(m.size, mode):
        score = ccca_similarity(m.rows, q.rows[list(perm)], depth=depth, variant=variant)
        scored.append((perm, score))
        if score > best_score:
            best_perm, best_score = perm, score
    return Alignment(best_perm, best_score, scored)

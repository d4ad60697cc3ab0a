"""Multi-view descriptor concatenation, brute-force cosine retrieval, and
localization recall at metric distance thresholds.

A query counts as recalled at (k, eps) when at least one of its top-k
retrieved locations lies within eps meters (inclusive) of the query's true
coordinates.  Alignment of shuffled query groups happens here: "oracle"
restores the ground-truth order, "ccca" recovers one with the alignment
module, "none" concatenates the presented order as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ccca
from .numerics import DomainError

DEFAULT_KS = (1, 5, 10)
DEFAULT_EPS = (5.0, 10.0, 15.0)
ALIGN_MODES = ("ccca", "oracle", "none")


def concat_group(group: np.ndarray | ccca.ViewGroup) -> np.ndarray:
    """Rows concatenated in slot order, then L2-normalized."""
    rows = group.rows if isinstance(group, ccca.ViewGroup) else np.atleast_2d(group)
    flat = rows.reshape(-1)
    norm = np.linalg.norm(flat)
    if norm == 0:
        raise DomainError("cannot normalize an all-zero group")
    return flat / norm


@dataclass
class Index:
    """Flat exact-search index; also keeps the per-view groups so query
    alignment can attend over a candidate's rows."""

    ids: list[str]
    coords: np.ndarray
    descriptors: np.ndarray
    groups: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(entries: list[tuple[str, tuple[float, float], np.ndarray]]) -> Index:
    """Entries are (id, (x_m, y_m), group rows).  Ids must be unique."""
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise DomainError("duplicate location id in index entries")
    coords = np.array([e[1] for e in entries], dtype=np.float64).reshape(len(entries), 2)
    groups = [np.atleast_2d(np.asarray(e[2], dtype=np.float64)) for e in entries]
    descriptors = (
        np.stack([concat_group(g) for g in groups]) if entries else np.zeros((0, 0))
    )
    return Index(ids, coords, descriptors, groups)


def query_topk(index: Index, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k by cosine, descending; ties broken by smaller id."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if len(index) == 0:
        return []
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise DomainError("zero-norm query")
    scores = index.descriptors @ (q / qn)
    scores /= np.linalg.norm(index.descriptors, axis=1)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.ids[i]))
    return [(index.ids[i], float(scores[i])) for i in order[: min(k, len(index))]]


@dataclass
class EvalQuery:
    """A text view group as presented (possibly shuffled), its true planar
    coordinates, and - when known - the canonical slot of each presented row."""

    coords: tuple[float, float]
    group: np.ndarray
    true_slots: tuple[int, ...] | None = None


@dataclass
class RecallTable:
    ks: tuple[int, ...]
    eps: tuple[float, ...]
    values: np.ndarray

    def recall(self, k: int, eps: float) -> float:
        return float(self.values[self.ks.index(k), self.eps.index(eps)])

    def to_tsv(self, comments: list[str] | None = None) -> str:
        lines = [f"# {c}" for c in (comments or [])]
        lines.append("k\t" + "\t".join(f"eps{e:g}" for e in self.eps))
        for i, k in enumerate(self.ks):
            lines.append(str(k) + "\t" + "\t".join(repr(float(v)) for v in self.values[i]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned columns in the r@k: eps5/eps10/eps15 cell layout."""
        cells = [f"r@{k}: " + "/".join(f"{self.recall(k, e):.2f}" for e in self.eps) for k in self.ks]
        width = max(len(c) for c in cells)
        return "\n".join(c.ljust(width) for c in cells) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "RecallTable":
        rows = []
        ks = []
        eps: tuple[float, ...] | None = None
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if eps is None:
                eps = tuple(float(c[3:]) for c in cols[1:])
                continue
            ks.append(int(cols[0]))
            rows.append([float(c) for c in cols[1:]])
        if eps is None or not rows:
            raise DomainError("not a recall table")
        return cls(tuple(ks), eps, np.array(rows))


def _align_to_canonical(query: EvalQuery, index: Index, mode: str,
                        ccca_variant: str, search_mode: str) -> np.ndarray:
    rows = np.atleast_2d(query.group)
    v = rows.shape[0]
    if mode == "none":
        return concat_group(rows)
    if mode == "oracle":
        if query.true_slots is None:
            raise DomainError("oracle alignment requires ground-truth slots")
        canonical = np.empty_like(rows)
        canonical[list(query.true_slots)] = rows
        return concat_group(canonical)
    # ccca: an unaligned pre-pass picks the best candidate, the query group is
    # aligned against that candidate's image group, then re-ranked.  The
    # pre-pass scores each candidate by the order-invariant mean of each
    # query row's best cosine over the candidate's rows, so a shuffled query
    # can still find the right group to align against.
    scores = [float((rows @ g.T).max(axis=1).mean()) for g in index.groups]
    best = min(range(len(index)), key=lambda i: (-scores[i], index.ids[i]))
    return _ccca_canonical(rows, index.groups[best], ccca_variant, search_mode)


def _ccca_canonical(rows: np.ndarray, candidate: np.ndarray,
                    ccca_variant: str, search_mode: str) -> np.ndarray:
    result = ccca.align(ccca.ViewGroup(rows), ccca.ViewGroup(candidate),
                        mode=search_mode, variant=ccca_variant)
    # candidate slot result.permutation[i] pairs with presented row i
    canonical = np.empty_like(rows)
    canonical[list(result.permutation)] = rows
    return concat_group(canonical)


def recall_table(
    queries: list[EvalQuery],
    index: Index,
    align_mode: str = "oracle",
    ks: tuple[int, ...] = DEFAULT_KS,
    eps: tuple[float, ...] = DEFAULT_EPS,
    ccca_variant: str = "full",
    search_mode: str = "full",
    per_candidate: bool = False,
) -> RecallTable:
    """Recall fractions over a (k, eps) grid.

    `per_candidate=True` aligns the query against every database entry and
    ranks by the cosine of each per-candidate alignment (exhaustive; only
    sensible for small databases)."""
    if align_mode not in ALIGN_MODES:
        raise DomainError(f"unknown align mode {align_mode!r}")
    if not queries or len(index) == 0:
        raise DomainError("recall needs non-empty queries and index")
    max_k = max(ks)
    hits = np.zeros((len(queries), len(ks), len(eps)))
    coord_of = {lid: index.coords[i] for i, lid in enumerate(index.ids)}
    for qi, query in enumerate(queries):
        if align_mode == "ccca" and per_candidate:
            ranked = _rank_per_candidate(query, index, ccca_variant, search_mode)[:max_k]
        else:
            desc = _align_to_canonical(query, index, align_mode, ccca_variant, search_mode)
            ranked = query_topk(index, desc, max_k)
        dists = np.array([np.linalg.norm(coord_of[lid] - np.asarray(query.coords)) for lid, _ in ranked])
        for ki, k in enumerate(ks):
            if len(dists) == 0:
                continue
            best = dists[: min(k, len(dists))].min()
            for ei, e in enumerate(eps):
                hits[qi, ki, ei] = 1.0 if best <= e else 0.0
    return RecallTable(tuple(ks), tuple(eps), hits.mean(axis=0))


def _rank_per_candidate(query: EvalQuery, index: Index,
                        ccca_variant: str, search_mode: str) -> list[tuple[str, float]]:
    rows = np.atleast_2d(query.group)
    scored = []
    for i, lid in enumerate(index.ids):
        desc = _ccca_canonical(rows, index.groups[i], ccca_variant, search_mode)
        scored.append((lid, float(np.dot(desc, index.descriptors[i]))))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored

"""Evaluation harness and the ablation arms behind the `ablate` command.

Every arm is a pure function of (dataset, seed): training inits, batch
order, and query shuffles all derive from the given seeds, so sweep tables
are reproducible run to run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import retrieval
from .dataset import Dataset, LocationEntry, truncate_text
from .descriptors import group_descriptors
from .model import ModelConfig, ModelParams
from .numerics import ConfigError
from .trainer import TrainConfig, TrainHistory, train

ABLATION_AXES = (
    "training-strategy",
    "text-head",
    "aggregation",
    "temperature",
    "ccca-variant",
    "truncation",
    "views",
)


def shuffled_queries(
    records: list, seed: int | None
) -> list[retrieval.EvalQuery]:
    """Text groups as retrieval queries; with a seed, each group's view order
    is shuffled (true slots retained for oracle evaluation)."""
    rng = None if seed is None else np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    queries = []
    for r in records:
        v = r.text_group.shape[0]
        slots = np.arange(v) if rng is None else rng.permutation(v)
        queries.append(retrieval.EvalQuery(r.coords, r.text_group[slots], tuple(int(s) for s in slots)))
    return queries


def evaluate_model(
    params: ModelParams,
    entries: list[LocationEntry],
    align_mode: str = "oracle",
    shuffle_seed: int | None = None,
    views: int | None = None,
    truncate: float | None = None,
    ks: tuple[int, ...] = retrieval.DEFAULT_KS,
    eps: tuple[float, ...] = retrieval.DEFAULT_EPS,
    ccca_variant: str = "full",
    search_mode: str = "full",
    per_candidate: bool = False,
) -> retrieval.RecallTable:
    """Index the entries' image groups, query with their text groups, return
    the recall grid."""
    records = group_descriptors(entries, params, views=views, truncate=truncate)
    index = retrieval.build_index([(r.id, r.coords, r.image_group) for r in records])
    queries = shuffled_queries(records, shuffle_seed)
    return retrieval.recall_table(
        queries, index, align_mode=align_mode, ks=ks, eps=eps,
        ccca_variant=ccca_variant, search_mode=search_mode, per_candidate=per_candidate,
    )


def truncate_entries(entries: list[LocationEntry], fraction: float) -> list[LocationEntry]:
    return [
        LocationEntry(
            e.id, e.x_m, e.y_m,
            [dataclasses.replace(v, text=truncate_text(v.text, fraction)) for v in e.views],
        )
        for e in entries
    ]


@dataclass
class ArmResult:
    axis: str
    arm: str
    seed: int
    table: retrieval.RecallTable
    history: TrainHistory | None = None


def _train_eval(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    truncation: float | None = None,
    **eval_kwargs,
) -> tuple[retrieval.RecallTable, TrainHistory]:
    tr = dataset.split_entries("train")
    va = dataset.split_entries("val")
    te = dataset.split_entries("test")
    if truncation is not None:
        tr = truncate_entries(tr, truncation)
        va = truncate_entries(va, truncation)
        eval_kwargs.setdefault("truncate", truncation)
    params, history = train(tr, va, model_config, train_config)
    return evaluate_model(params, te, **eval_kwargs), history


def run_axis(
    axis: str,
    dataset: Dataset,
    seeds: tuple[int, ...] = (0, 1, 2),
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
) -> list[ArmResult]:
    """Train/evaluate every arm of one ablation axis for each seed."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    base_mc = model_config or ModelConfig()
    base_tc = train_config or TrainConfig()
    results: list[ArmResult] = []

    for seed in seeds:
        tc = dataclasses.replace(base_tc, seed=seed)
        if axis == "training-strategy":
            for strategy in ("single", "group"):
                table, hist = _train_eval(dataset, base_mc, dataclasses.replace(tc, strategy=strategy))
                results.append(ArmResult(axis, strategy, seed, table, hist))
        elif axis == "text-head":
            for variant in ("m", "m_t2", "t1_m", "t1_m_t2"):
                mc = dataclasses.replace(base_mc, text_variant=variant)
                table, hist = _train_eval(dataset, mc, tc)
                results.append(ArmResult(axis, variant, seed, table, hist))
        elif axis == "aggregation":
            for agg in ("sinkhorn", "maxpool"):
                mc = dataclasses.replace(base_mc, aggregator=agg)
                table, hist = _train_eval(dataset, mc, tc)
                results.append(ArmResult(axis, agg, seed, table, hist))
        elif axis == "temperature":
            for arm, learn in (("learnable", True), ("removed", False)):
                mc = dataclasses.replace(base_mc, learn_temp=learn)
                table, hist = _train_eval(dataset, mc, tc)
                results.append(ArmResult(axis, arm, seed, table, hist))
        elif axis == "ccca-variant":
            params, hist = train(dataset.split_entries("train"), dataset.split_entries("val"), base_mc, tc)
            te = dataset.split_entries("test")
            shuffle_seed = 1000 + seed
            for arm, kwargs in (
                ("none", {"align_mode": "none"}),
                ("full", {"align_mode": "ccca", "ccca_variant": "full"}),
                ("no_cascade", {"align_mode": "ccca", "ccca_variant": "no_cascade"}),
                ("no_cosine", {"align_mode": "ccca", "ccca_variant": "no_cosine"}),
                ("oracle", {"align_mode": "oracle"}),
            ):
                table = evaluate_model(params, te, shuffle_seed=shuffle_seed, **kwargs)
                results.append(ArmResult(axis, arm, seed, table, hist))
        elif axis == "truncation":
            for fraction in (0.25, 0.5, 0.75, 1.0):
                table, hist = _train_eval(dataset, base_mc, tc, truncation=fraction)
                results.append(ArmResult(axis, f"{fraction:g}", seed, table, hist))
        elif axis == "views":
            params, hist = train(dataset.split_entries("train"), dataset.split_entries("val"), base_mc, tc)
            te = dataset.split_entries("test")
            for n in (1, 2, 3, 4):
                table = evaluate_model(params, te, views=n)
                results.append(ArmResult(axis, str(n), seed, table, hist))
    return results


def axis_summary(results: list[ArmResult]) -> dict[str, float]:
    """Mean recall@1@5m per arm across seeds."""
    sums: dict[str, list[float]] = {}
    for r in results:
        sums.setdefault(r.arm, []).append(r.table.recall(1, 5.0))
    return {arm: float(np.mean(vals)) for arm, vals in sums.items()}


def results_tsv(results: list[ArmResult], comments: list[str] | None = None) -> str:
    """One row per (arm, seed) with the whole recall grid; parseable by
    `read_tsv`."""
    ks = results[0].table.ks
    eps = results[0].table.eps
    header = ["axis", "arm", "seed"] + [f"r{k}_eps{e:g}" for k in ks for e in eps]
    lines = [f"# {c}" for c in (comments or [])]
    lines.append("\t".join(header))
    for r in results:
        cells = [r.axis, r.arm, str(r.seed)]
        cells += [repr(float(r.table.recall(k, e))) for k in ks for e in eps]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def read_tsv(text: str) -> tuple[list[str], list[list[str]]]:
    """Parse a report file written by this repo: '#' comments, one header
    row, tab-separated cells."""
    rows = [line.split("\t") for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not rows:
        raise ConfigError("empty table")
    return rows[0], rows[1:]

"""Contrastive training of the two descriptor heads.

The default "single" strategy treats every (location, view) text-image pair
as one contrastive element; the "group" ablation concatenates all views of a
location into one pair before the loss.  Optimization is plain Adam.  Runs
are deterministic given the seed: shuffling, init, and batching all come
from the seeded stream, and checkpoint/history artifacts are byte-stable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import retrieval
from .checkpoint import save_checkpoint
from .dataset import LocationEntry
from .descriptors import group_descriptors
from .model import ModelConfig, ModelParams, config_hash
from .numerics import ConfigError, DomainError

DIRECTIONS = ("text_to_image", "symmetric")
STRATEGIES = ("single", "group")


class GradientError(RuntimeError):
    """A non-finite gradient was about to enter the optimizer."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = 10
    temperature: float = 0.07
    direction: str = "symmetric"
    strategy: str = "single"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for a contrastive denominator")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"unknown loss direction {self.direction!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    val_recalls: list[float] = field(default_factory=list)
    config_hash: str = ""
    wall_clock_s: float = 0.0

    def to_json(self) -> str:
        """Deterministic serialization; wall clock is runtime diagnostics and
        is deliberately left out so rerun artifacts are byte-identical."""
        payload = {
            "config_hash": self.config_hash,
            "epoch_losses": self.epoch_losses,
            "val_recalls": self.val_recalls,
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def info_nce(text, image, temperature: float = 0.07, direction: str = "text_to_image") -> ag.Tensor:
    """InfoNCE over a batch of N matched descriptor pairs.

    Anchor i's positive is pair i; every other batch element is a negative.
    "symmetric" averages the text->image and image->text directions."""
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown loss direction {direction!r}")
    t = ag.as_tensor(text)
    q = ag.as_tensor(image)
    if t.ndim != 2 or t.shape != q.shape:
        raise DomainError(f"descriptor batches must share (N, D) shape: {t.shape} vs {q.shape}")
    if t.shape[0] < 1:
        raise DomainError("empty contrastive batch")
    logits = ag.matmul(t, ag.swapaxes(q, 0, 1)) * (1.0 / temperature)
    pos = ag.diagonal(logits)
    loss = ag.tmean(ag.logsumexp(logits, axis=1) - pos)
    if direction == "symmetric":
        loss_rev = ag.tmean(ag.logsumexp(logits, axis=0) - pos)
        loss = (loss + loss_rev) * 0.5
    return loss


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, tensors: dict[str, ag.Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in tensors.items()},
            v={k: np.zeros_like(t.data) for k, t in tensors.items()},
        )


def adam_step(
    tensors: dict[str, ag.Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update with bias correction."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, tensor in tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1**t)
        v_hat = state.v[name] / (1 - beta2**t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def _batch_loss(params: ModelParams, batch: list[tuple[LocationEntry, int]],
                config: TrainConfig) -> ag.Tensor:
    if config.strategy == "single":
        seqs = [entry.views[v].text for entry, v in batch]
        token_sets = [entry.views[v].image for entry, v in batch]
        text = params.encode_texts(seqs)
        image = params.encode_images(token_sets, train=True)
    else:
        entries = [entry for entry, _ in batch]
        n_views = {len(e.views) for e in entries}
        if len(n_views) != 1:
            raise ConfigError("group strategy requires a uniform view count")
        v = n_views.pop()
        seqs = [view.text for e in entries for view in e.views]
        token_sets = [view.image for e in entries for view in e.views]
        out_dim = params.config.out_dim
        text = ag.l2_normalize(ag.reshape(params.encode_texts(seqs), (len(entries), v * out_dim)))
        image = ag.l2_normalize(ag.reshape(
            params.encode_images(token_sets, train=True), (len(entries), v * out_dim)))
    return info_nce(text, image, config.temperature, config.direction)


def validation_recall(params: ModelParams, entries: list[LocationEntry]) -> float:
    """recall@1@5m with ground-truth view order (model selection metric)."""
    records = group_descriptors(entries, params)
    index = retrieval.build_index([(r.id, r.coords, r.image_group) for r in records])
    queries = [
        retrieval.EvalQuery(r.coords, r.text_group, tuple(range(r.text_group.shape[0])))
        for r in records
    ]
    table = retrieval.recall_table(queries, index, align_mode="oracle", ks=(1,), eps=(5.0,))
    return table.recall(1, 5.0)


def train(
    train_entries: list[LocationEntry],
    val_entries: list[LocationEntry],
    model_config: ModelConfig,
    config: TrainConfig,
    checkpoint_dir: str | None = None,
    quiet: bool = True,
) -> tuple[ModelParams, TrainHistory]:
    """Train from scratch; returns the best-on-validation parameters and the
    per-epoch history.  With `checkpoint_dir`, writes one checkpoint per
    epoch plus `checkpoint_best.bin`."""
    if not train_entries:
        raise DomainError("empty training set")
    for entry in train_entries:
        if not entry.views:
            raise DomainError(f"location {entry.id!r} has no usable views")
    params = ModelParams.init(model_config, config.seed)
    order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(2,))))
    state = AdamState.init(params.named())
    run_hash = config_hash(model_config.to_dict(), config.to_dict())
    history = TrainHistory(config_hash=run_hash)

    if config.strategy == "single":
        elements: list[tuple[LocationEntry, int]] = [
            (e, v) for e in train_entries for v in range(len(e.views))
        ]
    else:
        elements = [(e, 0) for e in train_entries]

    best_params = params.clone()
    best_recall = -1.0
    started = time.perf_counter()
    for epoch in range(config.epochs):
        perm = order_rng.permutation(len(elements))
        losses = []
        for start in range(0, len(elements), config.batch_size):
            batch = [elements[i] for i in perm[start:start + config.batch_size]]
            if len(batch) < 2:
                continue
            loss = _batch_loss(params, batch, config)
            params.zero_grads()
            loss.backward()
            grads = {k: t.grad for k, t in params.named().items() if t.grad is not None}
            adam_step(params.named(), grads, state, config.learning_rate)
            losses.append(loss.item())
        val = validation_recall(params, val_entries) if val_entries else 0.0
        history.epoch_losses.append(float(np.mean(losses)))
        history.val_recalls.append(val)
        if not quiet:
            print(f"epoch {epoch + 1:3d}  loss {history.epoch_losses[-1]:.4f}  val r@1@5m {val:.3f}")
        if checkpoint_dir:
            save_checkpoint(
                os.path.join(checkpoint_dir, f"checkpoint_epoch_{epoch + 1:02d}.bin"),
                params,
                extra={"epoch": epoch + 1, "train_config": config.to_dict(), "run_hash": run_hash},
            )
        if val > best_recall:
            best_recall = val
            best_params = params.clone()
    history.wall_clock_s = time.perf_counter() - started
    if checkpoint_dir:
        save_checkpoint(
            os.path.join(checkpoint_dir, "checkpoint_best.bin"),
            best_params,
            extra={"train_config": config.to_dict(), "run_hash": run_hash,
                   "best_val_recall": best_recall},
        )
    if not val_entries:
        best_params = params
    return best_params, history

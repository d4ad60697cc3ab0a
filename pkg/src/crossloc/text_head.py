"""Text descriptor head: sentence max-pooling, shared MLP, positional
encodings, one pre-norm transformer block over the sentence axis, mean pool,
L2 normalization.

Variants (ablation axis): "m" (pool+MLP only), "m_t2" (default: transformer
after the MLP), "t1_m" (transformer over pooled sentence vectors before the
MLP), "t1_m_t2" (both).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .numerics import ConfigError, DomainError, Rng, assert_finite

VARIANTS = ("m", "m_t2", "t1_m", "t1_m_t2")


@dataclass
class TextTokenSequence:
    """Sentence-segmented token embeddings from a frozen text backbone.

    `sentence_breaks` are exclusive end indices of each sentence, strictly
    increasing, with the last break equal to the token count.
    """

    tokens: np.ndarray
    sentence_breaks: tuple[int, ...]

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        self.sentence_breaks = tuple(int(b) for b in self.sentence_breaks)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise DomainError("text token array must be (n_tokens >= 1, dim)")
        assert_finite("text tokens", self.tokens)
        n = self.tokens.shape[0]
        if len(self.sentence_breaks) < 1:
            raise DomainError("need at least one sentence")
        if any(b2 <= b1 for b1, b2 in zip(self.sentence_breaks, self.sentence_breaks[1:])):
            raise DomainError("sentence breaks must be strictly increasing")
        if self.sentence_breaks[0] < 1 or self.sentence_breaks[-1] != n:
            raise DomainError("last sentence break must equal the token count")

    @property
    def n_sentences(self) -> int:
        return len(self.sentence_breaks)

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class TextHeadConfig:
    token_dim: int
    hidden: int
    out_dim: int
    heads: int = 4
    ff_mult: int = 4
    variant: str = "m_t2"
    pe_scale: float = 1.0
    init_scale: float = 0.05

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown text head variant {self.variant!r}")
        if "t2" in self.variant and self.out_dim % self.heads:
            raise ConfigError("out_dim must be divisible by heads")
        if "t1" in self.variant and self.token_dim % self.heads:
            raise ConfigError("token_dim must be divisible by heads")


def _block_tensors(prefix: str, width: int, ff_mult: int, rng: Rng, scale: float) -> dict[str, ag.Tensor]:
    t = {}
    for name in ("wq", "wk", "wv", "wo"):
        t[f"{prefix}.{name}"] = ag.parameter(rng.normal((width, width), scale))
        t[f"{prefix}.b{name[1]}"] = ag.parameter(np.zeros(width))
    t[f"{prefix}.ln1.g"] = ag.parameter(np.ones(width))
    t[f"{prefix}.ln1.b"] = ag.parameter(np.zeros(width))
    t[f"{prefix}.ln2.g"] = ag.parameter(np.ones(width))
    t[f"{prefix}.ln2.b"] = ag.parameter(np.zeros(width))
    t[f"{prefix}.ff.w1"] = ag.parameter(rng.normal((width, ff_mult * width), scale))
    t[f"{prefix}.ff.b1"] = ag.parameter(np.zeros(ff_mult * width))
    t[f"{prefix}.ff.w2"] = ag.parameter(rng.normal((ff_mult * width, width), scale))
    t[f"{prefix}.ff.b2"] = ag.parameter(np.zeros(width))
    return t


class TextHeadParams:
    """Trainable tensors of the text head, keyed by dotted path."""

    def __init__(self, config: TextHeadConfig, tensors: dict[str, ag.Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: TextHeadConfig, rng: Rng) -> "TextHeadParams":
        s = config.init_scale
        t = {
            "mlp.w1": ag.parameter(rng.normal((config.token_dim, config.hidden), s)),
            "mlp.b1": ag.parameter(np.zeros(config.hidden)),
            "mlp.w2": ag.parameter(rng.normal((config.hidden, config.out_dim), s)),
            "mlp.b2": ag.parameter(np.zeros(config.out_dim)),
        }
        if "t2" in config.variant:
            t.update(_block_tensors("t2", config.out_dim, config.ff_mult, rng, s))
        if "t1" in config.variant:
            t.update(_block_tensors("t1", config.token_dim, config.ff_mult, rng, s))
        return cls(config, t)

    def named(self) -> dict[str, ag.Tensor]:
        return self.tensors


def sentence_maxpool(seq: TextTokenSequence) -> np.ndarray:
    """Elementwise max over each sentence's tokens; one row per sentence."""
    rows = []
    start = 0
    for end in seq.sentence_breaks:
        rows.append(seq.tokens[start:end].max(axis=0))
        start = end
    return np.stack(rows)


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    """Standard sinusoidal positional encoding table, shape (n, dim)."""
    pe = np.zeros((n, dim))
    pos = np.arange(n)[:, None].astype(np.float64)
    idx = np.arange(0, dim, 2).astype(np.float64)
    angle = pos / np.power(10000.0, idx[None, :] / dim)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


def transformer_block(x: ag.Tensor, tensors: dict[str, ag.Tensor], prefix: str, heads: int) -> ag.Tensor:
    """Pre-norm self-attention + feed-forward with residuals; x is (B, S, W)."""
    b, s, w = x.shape
    dh = w // heads

    def heads_split(t):
        return ag.swapaxes(ag.reshape(t, (b, s, heads, dh)), 1, 2)

    h = ag.layer_norm(x, tensors[f"{prefix}.ln1.g"], tensors[f"{prefix}.ln1.b"])
    q = heads_split(ag.linear(h, tensors[f"{prefix}.wq"], tensors[f"{prefix}.bq"]))
    k = heads_split(ag.linear(h, tensors[f"{prefix}.wk"], tensors[f"{prefix}.bk"]))
    v = heads_split(ag.linear(h, tensors[f"{prefix}.wv"], tensors[f"{prefix}.bv"]))
    scores = ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    ctx = ag.matmul(ag.softmax(scores, axis=-1), v)
    ctx = ag.reshape(ag.swapaxes(ctx, 1, 2), (b, s, w))
    x = x + ag.linear(ctx, tensors[f"{prefix}.wo"], tensors[f"{prefix}.bo"])
    h2 = ag.layer_norm(x, tensors[f"{prefix}.ln2.g"], tensors[f"{prefix}.ln2.b"])
    ff = ag.linear(ag.relu(ag.linear(h2, tensors[f"{prefix}.ff.w1"], tensors[f"{prefix}.ff.b1"])),
                   tensors[f"{prefix}.ff.w2"], tensors[f"{prefix}.ff.b2"])
    return x + ff


def encode_text_stack(sentences: np.ndarray, params: TextHeadParams) -> ag.Tensor:
    """Encode a stack of pooled sentence matrices (B, S, token_dim) to unit-norm
    descriptors (B, out_dim).  Records the tape when gradients are enabled."""
    cfg = params.config
    if sentences.ndim != 3 or sentences.shape[2] != cfg.token_dim:
        raise ConfigError(f"expected (B, S, {cfg.token_dim}) sentence stack, got {sentences.shape}")
    t = params.tensors
    x = ag.Tensor(sentences)
    if "t1" in cfg.variant:
        x = transformer_block(x, t, "t1", cfg.heads)
    x = ag.linear(ag.relu(ag.linear(x, t["mlp.w1"], t["mlp.b1"])), t["mlp.w2"], t["mlp.b2"])
    pe = cfg.pe_scale * sinusoidal_positions(sentences.shape[1], cfg.out_dim)
    x = x + ag.Tensor(pe[None, :, :])
    if "t2" in cfg.variant:
        x = transformer_block(x, t, "t2", cfg.heads)
    pooled = ag.tmean(x, axis=1)
    return ag.l2_normalize(pooled, axis=-1)


def encode_text_batch(seqs: list[TextTokenSequence], params: TextHeadParams) -> ag.Tensor:
    """Encode a list of sequences, bucketing by sentence count so mixed-shape
    batches still run vectorized; output row order matches the input order."""
    if not seqs:
        raise DomainError("empty text batch")
    pooled = [sentence_maxpool(s) for s in seqs]
    buckets: dict[int, list[int]] = {}
    for i, p in enumerate(pooled):
        buckets.setdefault(p.shape[0], []).append(i)
    if len(buckets) == 1:
        return encode_text_stack(np.stack(pooled), params)
    parts = []
    order = []
    for n_sent in sorted(buckets):
        idxs = buckets[n_sent]
        parts.append(encode_text_stack(np.stack([pooled[i] for i in idxs]), params))
        order.extend(idxs)
    stacked = ag.concat(parts, axis=0)
    # stacked row j encodes seqs[order[j]]; scatter rows back to input order
    unshuffle = np.zeros((len(seqs), len(seqs)))
    unshuffle[order, np.arange(len(seqs))] = 1.0
    return ag.matmul(ag.Tensor(unshuffle), stacked)


def encode_text(seq: TextTokenSequence, params: TextHeadParams) -> np.ndarray:
    """One unit-norm descriptor for one sequence (no gradient tape)."""
    if seq.dim != params.config.token_dim:
        raise ConfigError(f"token dim {seq.dim} != configured {params.config.token_dim}")
    with ag.no_grad():
        out = encode_text_stack(sentence_maxpool(seq)[None, :, :], params)
    return out.data[0]

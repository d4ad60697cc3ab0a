"""Full model: configuration, the trainable parameter tree (text head +
image aggregation head), and batched encode dispatch for both modalities.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .image_aggregator import (
    AggregatorConfig,
    AggregatorParams,
    ImageTokenSet,
    encode_image_batch,
    maxpool_aggregate,
)
from .numerics import ConfigError, Rng
from .text_head import TextHeadConfig, TextHeadParams, TextTokenSequence, encode_text_batch

AGGREGATORS = ("sinkhorn", "maxpool")


@dataclass
class ModelConfig:
    """Shared hyperparameters of both heads.

    With the "maxpool" aggregator the image descriptor is the parameter-free
    token max of width `image_dim`, so the text head's output width follows
    `image_dim` instead of `descriptor_dim`.
    """

    descriptor_dim: int = 64
    clusters: int = 8
    text_dim: int = 32
    text_hidden: int = 64
    heads: int = 4
    ff_mult: int = 4
    text_variant: str = "m_t2"
    pe_scale: float = 0.1
    image_dim: int = 32
    score_hidden: int = 32
    reg: float = 0.1
    learn_temp: bool = True
    treat_scores_as_cost: bool = False
    sinkhorn_iters_train: int = 50
    sinkhorn_iters_eval: int = 100
    sinkhorn_tol: float = 1e-6
    aggregator: str = "sinkhorn"
    init_scale: float = 0.03

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.aggregator == "sinkhorn" and self.descriptor_dim % self.clusters:
            raise ConfigError("descriptor_dim must be divisible by clusters")

    @property
    def out_dim(self) -> int:
        return self.descriptor_dim if self.aggregator == "sinkhorn" else self.image_dim

    def text_config(self) -> TextHeadConfig:
        return TextHeadConfig(
            token_dim=self.text_dim,
            hidden=self.text_hidden,
            out_dim=self.out_dim,
            heads=self.heads,
            ff_mult=self.ff_mult,
            variant=self.text_variant,
            pe_scale=self.pe_scale,
            init_scale=self.init_scale,
        )

    def aggregator_config(self) -> AggregatorConfig:
        return AggregatorConfig(
            token_dim=self.image_dim,
            hidden=self.score_hidden,
            clusters=self.clusters,
            cluster_dim=self.descriptor_dim // self.clusters,
            reg=self.reg,
            learn_temp=self.learn_temp,
            treat_scores_as_cost=self.treat_scores_as_cost,
            iters_train=self.sinkhorn_iters_train,
            iters_eval=self.sinkhorn_iters_eval,
            tol=self.sinkhorn_tol,
            init_scale=self.init_scale,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def config_hash(*configs: dict) -> str:
    """Stable hex digest of one or more config mappings."""
    blob = json.dumps(list(configs), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ModelParams:
    """All trainable weights plus the frozen hyperparameter record."""

    VERSION = 1

    def __init__(self, config: ModelConfig, text: TextHeadParams, image: AggregatorParams | None):
        if config.aggregator == "sinkhorn" and image is None:
            raise ConfigError("sinkhorn aggregator requires image parameters")
        self.config = config
        self.text = text
        self.image = image

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = Rng(seed)
        text = TextHeadParams.init(config.text_config(), rng.substream(0))
        image = None
        if config.aggregator == "sinkhorn":
            image = AggregatorParams.init(config.aggregator_config(), rng.substream(1))
        return cls(config, text, image)

    @classmethod
    def from_tensors(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelParams":
        text_t = {k[len("text."):]: ag.parameter(v) for k, v in arrays.items() if k.startswith("text.")}
        image_t = {k[len("image."):]: ag.parameter(v) for k, v in arrays.items() if k.startswith("image.")}
        text = TextHeadParams(config.text_config(), text_t)
        image = AggregatorParams(config.aggregator_config(), image_t) if image_t else None
        return cls(config, text, image)

    def named(self) -> dict[str, ag.Tensor]:
        out = {f"text.{k}": t for k, t in self.text.named().items()}
        if self.image is not None:
            out.update({f"image.{k}": t for k, t in self.image.named().items()})
        return out

    def zero_grads(self) -> None:
        for t in self.named().values():
            t.zero_grad()

    def clone(self) -> "ModelParams":
        return ModelParams.from_tensors(self.config, {k: t.data.copy() for k, t in self.named().items()})

    def encode_texts(self, seqs: list[TextTokenSequence]) -> ag.Tensor:
        return encode_text_batch(seqs, self.text)

    def encode_images(self, token_sets: list[ImageTokenSet], train: bool = False) -> ag.Tensor:
        if self.config.aggregator == "maxpool":
            return ag.Tensor(np.stack([maxpool_aggregate(ts) for ts in token_sets]))
        return encode_image_batch(token_sets, self.image, train=train)

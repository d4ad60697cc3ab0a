"""Synthetic multi-view cross-modal dataset, JSONL interchange, splits, and
the truncation / view-subset transforms used by the robustness studies.

Each location sits on a metric grid and owns up to four views; every view
holds one image token set and one sentence-segmented text token sequence.
Both modalities are noisy linear readouts of a shared per-view latent, so a
trained model can align them while an untrained one cannot.

Interchange format (one JSON record per line; lines starting with '#' are
ignored as comments):

    {"location_id": str, "x_m": float, "y_m": float, "view": 0-3,
     "modality": "image"|"text", "tokens": [[float, ...], ...],
     "sentence_breaks": [int, ...]   # text records only
     "global_token": [float, ...]}   # image records only, optional

Token dims must be uniform per modality across a file.  Tokens are stored
at float32 precision and widened to float64 in memory; the generator rounds
to float32 up front so save/load round-trips are exact.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .image_aggregator import ImageTokenSet
from .numerics import ConfigError, DomainError, Rng
from .text_head import TextTokenSequence

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_RATIOS = (5 / 7, 1 / 7, 1 / 7)


class DatasetFormatError(ValueError):
    """Malformed or inconsistent interchange file."""


@dataclass
class View:
    image: ImageTokenSet
    text: TextTokenSequence


@dataclass
class LocationEntry:
    """One place: planar coordinates in meters plus 1-4 paired views in
    ground-truth order."""

    id: str
    x_m: float
    y_m: float
    views: list[View]

    def __post_init__(self):
        if not (1 <= len(self.views) <= 4):
            raise DomainError("a location must hold 1-4 views")
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise DomainError("coordinates must be finite")

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m])


@dataclass
class Dataset:
    entries: list[LocationEntry]
    splits: dict[str, str] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def split_entries(self, name: str) -> list[LocationEntry]:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}")
        return [e for e in self.entries if self.splits.get(e.id) == name]


@dataclass
class GenConfig:
    grid_rows: int = 14
    grid_cols: int = 23
    spacing_m: float = 6.0
    views: int = 4
    latent_dim: int = 16
    image_tokens: int = 16
    distractor_tokens: int = 2
    distractor_scale: float = 1.2
    image_dim: int = 32
    sentences: int = 4
    tokens_per_sentence: int = 8
    text_dim: int = 32
    sigma_img: float = 0.1
    sigma_txt: float = 0.1
    correlation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.spacing_m <= 0:
            raise ConfigError("spacing must be positive")
        if min(self.sigma_img, self.sigma_txt) < 0:
            raise ConfigError("noise levels must be nonnegative")
        if not (0.0 <= self.correlation <= 1.0):
            raise ConfigError("correlation must lie in [0, 1]")
        if min(self.grid_rows, self.grid_cols, self.latent_dim, self.image_tokens,
               self.image_dim, self.sentences, self.tokens_per_sentence, self.text_dim) < 1:
            raise ConfigError("degenerate generator dimensions")
        if not (0 <= self.distractor_tokens < self.image_tokens):
            raise ConfigError("distractor_tokens must leave at least one informative token")
        if not (1 <= self.views <= 4):
            raise ConfigError("views must be 1-4")


def _f32(arr: np.ndarray) -> np.ndarray:
    """Round to float32 precision, keep float64 storage."""
    return arr.astype(np.float32).astype(np.float64)


def _random_rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diagonal(r))


def generate(config: GenConfig) -> Dataset:
    """Deterministic synthetic dataset; a pure function of the config.

    Locations sit on a grid_rows x grid_cols grid at `spacing_m`.  Each
    location draws a latent vector; each view rotates and offsets it with
    maps shared across locations; image and text tokens are fixed random
    linear readouts of the view latent plus modality noise."""
    n_loc = config.grid_rows * config.grid_cols
    root = np.random.SeedSequence(config.seed)
    maps_ss, *loc_ss = root.spawn(n_loc + 1)
    maps_rng = np.random.Generator(np.random.PCG64(maps_ss))

    rot = np.stack([_random_rotation(maps_rng, config.latent_dim) for _ in range(config.views)])
    offsets = maps_rng.normal(size=(config.views, config.latent_dim))
    n_signal = config.image_tokens - config.distractor_tokens
    a_img = maps_rng.normal(size=(n_signal, config.image_dim, config.latent_dim))
    a_img /= math.sqrt(config.latent_dim)
    a_glob = maps_rng.normal(size=(config.image_dim, config.latent_dim)) / math.sqrt(config.latent_dim)
    n_txt = config.sentences * config.tokens_per_sentence
    a_txt = maps_rng.normal(size=(n_txt, config.text_dim, config.latent_dim))
    # each sentence reads a disjoint window of latent dims (sentences describe
    # different aspects of the place), so truncating text discards information
    windows = np.array_split(np.arange(config.latent_dim), config.sentences)
    for s in range(config.sentences):
        mask = np.zeros(config.latent_dim)
        mask[windows[s]] = 1.0
        toks = slice(s * config.tokens_per_sentence, (s + 1) * config.tokens_per_sentence)
        a_txt[toks] *= mask[None, None, :]
        a_txt[toks] /= math.sqrt(max(len(windows[s]), 1))
    breaks = tuple(range(config.tokens_per_sentence, n_txt + 1, config.tokens_per_sentence))

    entries = []
    for loc in range(n_loc):
        rng = np.random.Generator(np.random.PCG64(loc_ss[loc]))
        z = rng.normal(size=config.latent_dim)
        row, col = divmod(loc, config.grid_cols)
        views = []
        for v in range(config.views):
            z_view = rot[v] @ z + offsets[v]
            img_tokens = np.einsum("tdl,l->td", a_img, z_view)
            img_tokens += config.sigma_img * rng.normal(size=img_tokens.shape)
            if config.distractor_tokens:
                # uninformative clutter tokens carrying no location signal
                clutter = rng.normal(size=(config.distractor_tokens, config.image_dim))
                clutter *= config.distractor_scale
                img_tokens = np.concatenate([img_tokens, clutter])
            global_token = a_glob @ z_view + config.sigma_img * rng.normal(size=config.image_dim)
            if config.correlation < 1.0:
                z_txt = config.correlation * z_view
                z_txt += math.sqrt(1.0 - config.correlation**2) * rng.normal(size=config.latent_dim)
            else:
                z_txt = z_view
            txt_tokens = np.einsum("tdl,l->td", a_txt, z_txt)
            txt_tokens += config.sigma_txt * rng.normal(size=txt_tokens.shape)
            views.append(View(
                image=ImageTokenSet(_f32(img_tokens), _f32(global_token)),
                text=TextTokenSequence(_f32(txt_tokens), breaks),
            ))
        entries.append(LocationEntry(
            id=f"loc{loc:04d}",
            x_m=col * config.spacing_m,
            y_m=row * config.spacing_m,
            views=views,
        ))
    return Dataset(entries, provenance={"generator": dataclasses.asdict(config)})


def _tokens_to_json(arr: np.ndarray) -> list:
    return [[float(np.float32(x)) for x in row] for row in arr]


def save_jsonl(dataset: Dataset, path: str, header: dict | None = None) -> None:
    """Write the interchange file; emits a '#' header carrying provenance."""
    lines = ["# crossloc-dataset v1"]
    meta = dict(header or {})
    if dataset.provenance:
        meta.setdefault("provenance", dataset.provenance)
    if meta:
        lines.append("# meta=" + json.dumps(meta, sort_keys=True))
    for entry in dataset.entries:
        for view_idx, view in enumerate(entry.views):
            base = {
                "location_id": entry.id,
                "x_m": float(np.float32(entry.x_m)),
                "y_m": float(np.float32(entry.y_m)),
                "view": view_idx,
            }
            img = dict(base, modality="image", tokens=_tokens_to_json(view.image.local_tokens))
            if view.image.global_token is not None:
                img["global_token"] = [float(np.float32(x)) for x in view.image.global_token]
            lines.append(json.dumps(img))
            txt = dict(base, modality="text", tokens=_tokens_to_json(view.text.tokens),
                       sentence_breaks=list(view.text.sentence_breaks))
            lines.append(json.dumps(txt))
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _require(record: dict, key: str, line_no: int):
    if key not in record:
        raise DatasetFormatError(f"line {line_no}: record missing {key!r}")
    return record[key]


def load_jsonl(path: str) -> Dataset:
    """Parse an interchange file; rejects malformed lines (with the line
    number) and files whose token dims are not uniform per modality."""
    per_loc: dict[str, dict] = {}
    dims = {"image": None, "text": None}
    provenance: dict = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# meta="):
                    try:
                        provenance = json.loads(line[len("# meta="):]).get("provenance", {})
                    except json.JSONDecodeError:
                        pass
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DatasetFormatError(f"line {line_no}: record must be a JSON object")
            loc_id = _require(record, "location_id", line_no)
            x_m = float(_require(record, "x_m", line_no))
            y_m = float(_require(record, "y_m", line_no))
            view = _require(record, "view", line_no)
            modality = _require(record, "modality", line_no)
            tokens = np.asarray(_require(record, "tokens", line_no), dtype=np.float64)
            if modality not in ("image", "text"):
                raise DatasetFormatError(f"line {line_no}: unknown modality {modality!r}")
            if not isinstance(view, int) or not (0 <= view <= 3):
                raise DatasetFormatError(f"line {line_no}: view must be an integer in 0-3")
            if tokens.ndim != 2 or tokens.shape[0] < 1:
                raise DatasetFormatError(f"line {line_no}: tokens must be a non-empty 2-D array")
            if dims[modality] is None:
                dims[modality] = tokens.shape[1]
            elif dims[modality] != tokens.shape[1]:
                raise DatasetFormatError(
                    f"line {line_no}: {modality} token dim {tokens.shape[1]} != {dims[modality]} seen earlier")
            slot = per_loc.setdefault(loc_id, {"x_m": x_m, "y_m": y_m, "views": {}})
            if (slot["x_m"], slot["y_m"]) != (x_m, y_m):
                raise DatasetFormatError(f"line {line_no}: inconsistent coordinates for {loc_id!r}")
            view_slot = slot["views"].setdefault(view, {})
            if modality in view_slot:
                raise DatasetFormatError(f"line {line_no}: duplicate {modality} record for {loc_id!r} view {view}")
            if modality == "text":
                breaks = _require(record, "sentence_breaks", line_no)
                try:
                    view_slot["text"] = TextTokenSequence(tokens, tuple(breaks))
                except DomainError as exc:
                    raise DatasetFormatError(f"line {line_no}: {exc}") from exc
            else:
                glob = record.get("global_token")
                view_slot["image"] = ImageTokenSet(tokens, None if glob is None else np.asarray(glob))

    entries = []
    for loc_id, slot in per_loc.items():
        view_ids = sorted(slot["views"])
        if view_ids != list(range(len(view_ids))):
            raise DatasetFormatError(f"location {loc_id!r}: views must be contiguous from 0")
        views = []
        for v in view_ids:
            pair = slot["views"][v]
            if "image" not in pair or "text" not in pair:
                raise DatasetFormatError(f"location {loc_id!r} view {v}: needs both an image and a text record")
            views.append(View(image=pair["image"], text=pair["text"]))
        entries.append(LocationEntry(loc_id, slot["x_m"], slot["y_m"], views))
    return Dataset(entries, provenance=provenance)


def split(dataset: Dataset, ratios: tuple[float, float, float] = DEFAULT_RATIOS, seed: int = 0) -> Dataset:
    """Deterministic shuffled partition by location into train/val/test."""
    if len(ratios) != len(SPLIT_NAMES):
        raise ConfigError("need one ratio per split")
    if any(r <= 0 for r in ratios):
        raise ConfigError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must sum to 1")
    n = len(dataset.entries)
    counts = [math.floor(r * n) for r in ratios]
    remainders = [r * n - c for r, c in zip(ratios, counts)]
    for _ in range(n - sum(counts)):
        best = max(range(len(ratios)), key=lambda i: (remainders[i], -i))
        counts[best] += 1
        remainders[best] = -1.0
    if any(c == 0 for c in counts):
        raise ConfigError(f"{n} locations are too few for three non-empty splits")
    order = Rng(seed).shuffled(n)
    labels: dict[str, str] = {}
    cursor = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for i in order[cursor:cursor + count]:
            labels[dataset.entries[i].id] = name
        cursor += count
    return Dataset(dataset.entries, splits=labels, provenance=dataset.provenance)


def truncate_text(seq: TextTokenSequence, fraction: float) -> TextTokenSequence:
    """Keep the first ceil(fraction * n) tokens; a cut sentence keeps its
    prefix as a shorter sentence."""
    if not (0.0 < fraction <= 1.0):
        raise DomainError("fraction must lie in (0, 1]")
    n = seq.tokens.shape[0]
    keep = math.ceil(fraction * n)
    breaks = [b for b in seq.sentence_breaks if b < keep] + [keep]
    return TextTokenSequence(seq.tokens[:keep].copy(), tuple(breaks))


def subset_views(entry: LocationEntry, n: int) -> LocationEntry:
    """First n views of the ground-truth order, both modalities."""
    if not (1 <= n <= len(entry.views)):
        raise DomainError(f"cannot keep {n} of {len(entry.views)} views")
    return LocationEntry(entry.id, entry.x_m, entry.y_m, entry.views[:n])

"""Bridge from dataset entries to per-location descriptor groups.

Encoding runs in eval mode (no gradient tape, tolerance-stopped Sinkhorn)
and is batched across all views of all requested entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .dataset import LocationEntry, subset_views, truncate_text
from .model import ModelParams


@dataclass
class GroupRecord:
    id: str
    coords: tuple[float, float]
    text_group: np.ndarray
    image_group: np.ndarray


def group_descriptors(
    entries: list[LocationEntry],
    params: ModelParams,
    views: int | None = None,
    truncate: float | None = None,
) -> list[GroupRecord]:
    """Unit-norm text and image descriptor rows per location, in ground-truth
    view order.  `views` keeps the first n views; `truncate` keeps the given
    fraction of each text sequence."""
    trimmed = [subset_views(e, views) if views is not None else e for e in entries]
    seqs = []
    token_sets = []
    sizes = []
    for entry in trimmed:
        sizes.append(len(entry.views))
        for view in entry.views:
            seqs.append(truncate_text(view.text, truncate) if truncate is not None else view.text)
            token_sets.append(view.image)
    with ag.no_grad():
        text = params.encode_texts(seqs).data
        image = params.encode_images(token_sets).data
    records = []
    cursor = 0
    for entry, size in zip(trimmed, sizes):
        records.append(GroupRecord(
            id=entry.id,
            coords=(entry.x_m, entry.y_m),
            text_group=text[cursor:cursor + size],
            image_group=image[cursor:cursor + size],
        ))
        cursor += size
    return records

"""Padded batches of training sequences for the encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..numerics import DTYPES
from ..corpus.windows import TrainingSequence


@dataclass
class Batch:
    """Words then entities, padded per batch.

    ``position_average[b, j]`` holds 1/|span| at the word indices entity ``j``
    of example ``b`` covers, so entity position embeddings come from one
    constant matrix product.  Label arrays carry -1 at unsupervised slots.
    """

    word_ids: np.ndarray                  # (B, m) int64
    word_mask: np.ndarray                 # (B, m) bool
    entity_ids: np.ndarray                # (B, n) int64
    entity_mask: np.ndarray               # (B, n) bool
    position_average: np.ndarray          # (B, n, m) float
    entity_positions: list[list[list[int]]]
    word_labels: np.ndarray | None = None    # (B, m) int64
    entity_labels: np.ndarray | None = None  # (B, n) int64
    extra_entity_param: str | None = None
    sequences: list[TrainingSequence] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.word_ids.shape[0]

    @property
    def max_words(self) -> int:
        return self.word_ids.shape[1]

    @property
    def max_entities(self) -> int:
        return self.entity_ids.shape[1]


def build_batch(
    sequences: list[TrainingSequence],
    pad_word_id: int,
    dtype: str = "f32",
    word_ids_override: list[list[int]] | None = None,
    entity_ids_override: list[list[int]] | None = None,
    word_labels: list[list[int]] | None = None,
    entity_labels: list[list[int]] | None = None,
    extra_entity_param: str | None = None,
) -> Batch:
    """Pad sequences into one batch; overrides carry masked/corrupted ids."""
    if not sequences:
        raise ValidationError("cannot build an empty batch")
    dt = DTYPES[dtype]
    b = len(sequences)
    m = max(s.num_words for s in sequences)
    n = max((s.num_entities for s in sequences), default=0)

    word_ids = np.full((b, m), pad_word_id, dtype=np.int64)
    word_mask = np.zeros((b, m), dtype=bool)
    entity_ids = np.zeros((b, max(n, 0)), dtype=np.int64)
    entity_mask = np.zeros((b, max(n, 0)), dtype=bool)
    averages = np.zeros((b, max(n, 0), m), dtype=dt)
    w_labels = np.full((b, m), -1, dtype=np.int64)
    e_labels = np.full((b, max(n, 0)), -1, dtype=np.int64)
    positions: list[list[list[int]]] = []

    for i, seq in enumerate(sequences):
        ids = word_ids_override[i] if word_ids_override else seq.word_ids
        if len(ids) != seq.num_words:
            raise ValidationError(f"word override length mismatch in sequence {i}")
        word_ids[i, : len(ids)] = ids
        word_mask[i, : len(ids)] = True
        eids = entity_ids_override[i] if entity_ids_override else seq.entity_ids
        if len(eids) != seq.num_entities:
            raise ValidationError(f"entity override length mismatch in sequence {i}")
        for j, (eid, span) in enumerate(zip(eids, seq.entity_positions)):
            if not span:
                raise ValidationError(f"entity {j} of sequence {i} has no positions")
            if min(span) < 0 or max(span) >= seq.num_words:
                raise ValidationError(
                    f"entity {j} of sequence {i} points at position outside its words"
                )
            entity_ids[i, j] = eid
            entity_mask[i, j] = True
            averages[i, j, sorted(span)] = dt(1.0 / len(span))
        if word_labels is not None:
            w_labels[i, : len(word_labels[i])] = word_labels[i]
        if entity_labels is not None:
            e_labels[i, : len(entity_labels[i])] = entity_labels[i]
        positions.append([list(p) for p in seq.entity_positions])

    return Batch(
        word_ids=word_ids,
        word_mask=word_mask,
        entity_ids=entity_ids,
        entity_mask=entity_mask,
        position_average=averages,
        entity_positions=positions,
        word_labels=w_labels if word_labels is not None else None,
        entity_labels=e_labels if entity_labels is not None else None,
        extra_entity_param=extra_entity_param,
        sequences=list(sequences),
    )

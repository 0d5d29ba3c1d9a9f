"""Span enumeration and decoding rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


def ner_enumerate(num_words: int, max_span_len: int = 16) -> list[tuple[int, int]]:
    """All (start, end) content spans of length <= max_span_len, start asc then end asc."""
    if max_span_len < 1:
        raise ValidationError(f"max_span_len must be >= 1, got {max_span_len}")
    return [
        (start, end)
        for start in range(num_words)
        for end in range(start + 1, min(start + max_span_len, num_words) + 1)
    ]


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int
    label: str | None      # None means predicted non-entity
    logit: float


def ner_decode(predictions: list[SpanPrediction]) -> list[tuple[int, int, str]]:
    """Greedy non-overlapping selection of entity-typed spans.

    Non-entity predictions drop out; the rest rank by predicted-type logit
    descending with (earlier start, shorter span) breaking ties.  A span is
    accepted iff it overlaps nothing already accepted.
    """
    ranked = sorted(
        (p for p in predictions if p.label is not None),
        key=lambda p: (-p.logit, p.start, p.end - p.start),
    )
    accepted: list[SpanPrediction] = []
    for candidate in ranked:
        if all(candidate.end <= a.start or candidate.start >= a.end for a in accepted):
            accepted.append(candidate)
    return sorted((p.start, p.end, p.label) for p in accepted)


def extractive_decode(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    passage_start: int,
    passage_end: int,
    max_answer_len: int = 30,
) -> tuple[int, int]:
    """Best start/end pair inside the passage window.

    Positions are sequence indices; the returned pair is (start, end) with
    end exclusive.  The answer maximizes start+end logits subject to
    start <= last word and length <= max_answer_len; ties resolve to the
    earlier start, then the shorter span.
    """
    if passage_end <= passage_start:
        raise ValidationError("empty passage window")
    best = None
    best_score = -np.inf
    for s in range(passage_start, passage_end):
        top = min(s + max_answer_len, passage_end)
        for e in range(s, top):
            score = float(start_logits[s] + end_logits[e])
            if score > best_score:
                best_score = score
                best = (s, e + 1)
    return best

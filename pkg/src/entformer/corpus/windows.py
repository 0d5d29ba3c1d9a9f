"""Windowing documents into model-ready training sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ValidationError
from .documents import AnnotatedDocument
from .vocab import CLS_WORD, SEP_WORD, Vocabulary


@dataclass
class TrainingSequence:
    """One encoder input: words bracketed by [CLS]/[SEP] plus entity tokens.

    ``entity_positions[j]`` lists the word-sequence indices entity ``j``
    spans, counted with [CLS] at index 0.
    """

    words: list[str]
    word_ids: list[int]
    entity_ids: list[int]
    entity_positions: list[list[int]]
    doc_id: str = ""
    window_index: int = 0
    entity_titles: list[str] = field(default_factory=list)

    @property
    def num_words(self) -> int:
        return len(self.word_ids)

    @property
    def num_entities(self) -> int:
        return len(self.entity_ids)

    def validate(self) -> None:
        if len(self.word_ids) != len(self.words):
            raise ValidationError("word ids and words disagree in length")
        if len(self.entity_ids) != len(self.entity_positions):
            raise ValidationError("entity ids and position lists disagree in length")
        last_real = len(self.word_ids) - 2  # index before the final [SEP]
        for j, positions in enumerate(self.entity_positions):
            if not positions:
                raise ValidationError(f"entity {j} has an empty position list")
            if positions != list(range(positions[0], positions[0] + len(positions))):
                raise ValidationError(f"entity {j} positions {positions} are not a contiguous run")
            if positions[0] < 1 or positions[-1] > last_real:
                raise ValidationError(
                    f"entity {j} positions {positions} fall outside the real word range"
                )


def window(
    doc: AnnotatedDocument, vocab: Vocabulary, max_word_length: int
) -> list[TrainingSequence]:
    """Split a document into non-overlapping sequences of <= ``max_word_length`` words.

    [CLS]/[SEP] take two of the slots.  An annotation survives only if its
    whole span fits in one window; entities missing from the vocabulary map
    to the unknown entity.
    """
    if max_word_length < 16:
        raise ValidationError(f"max_word_length must be >= 16, got {max_word_length}")
    capacity = max_word_length - 2
    sequences = []
    for index, base in enumerate(range(0, max(len(doc.words), 1), capacity)):
        chunk = doc.words[base : base + capacity]
        if not chunk and index > 0:
            break
        words = [CLS_WORD] + chunk + [SEP_WORD]
        entity_ids: list[int] = []
        entity_positions: list[list[int]] = []
        entity_titles: list[str] = []
        for ann in doc.annotations:
            if ann.start >= base and ann.end <= base + len(chunk):
                entity_ids.append(vocab.entity_id(ann.title))
                entity_positions.append(list(range(ann.start - base + 1, ann.end - base + 1)))
                entity_titles.append(ann.title)
        seq = TrainingSequence(
            words=words,
            word_ids=[vocab.cls_id] + [vocab.word_id(w) for w in chunk] + [vocab.sep_id],
            entity_ids=entity_ids,
            entity_positions=entity_positions,
            doc_id=doc.id,
            window_index=index,
            entity_titles=entity_titles,
        )
        seq.validate()
        sequences.append(seq)
        if base + capacity >= len(doc.words):
            break
    return sequences

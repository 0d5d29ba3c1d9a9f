"""Task examples and their JSON-lines files.

All spans are content coordinates (end exclusive) within the example's own
word lists; forward constructions translate them into encoder positions.
A dataset file starts with one header line ``{"meta": {"variant", "labels"}}``
followed by one example object per line.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .._io import write_atomic_text
from ..errors import ValidationError

VARIANTS = ("typing", "relation", "ner", "cloze", "extractive")


def _check_span(span, length, what):
    if span is None:
        raise ValidationError(f"missing {what}")
    start, end = span
    if not (0 <= start < end <= length):
        raise ValidationError(f"{what} [{start}, {end}) out of range for {length} words")


@dataclass
class TaskExample:
    variant: str
    example_id: str
    words: list[str] | None = None
    question: list[str] | None = None
    passage: list[str] | None = None
    # typing
    target_span: tuple[int, int] | None = None
    gold_types: list[str] | None = None
    # relation
    head_span: tuple[int, int] | None = None
    tail_span: tuple[int, int] | None = None
    gold_relation: str | None = None
    # ner
    gold_spans: list[tuple[int, int, str]] | None = None
    # cloze
    placeholder_span: tuple[int, int] | None = None
    passage_spans: list[tuple[int, int]] | None = None
    answer_indices: list[int] | None = None
    # extractive
    answer_span: tuple[int, int] | None = None
    question_entities: list[tuple[str, int, int]] | None = None
    passage_entities: list[tuple[str, int, int]] | None = None

    def has_gold(self) -> bool:
        return {
            "typing": self.gold_types is not None,
            "relation": self.gold_relation is not None,
            "ner": self.gold_spans is not None,
            "cloze": self.answer_indices is not None,
            "extractive": self.answer_span is not None,
        }[self.variant]

    def validate(self, labels: list[str] | None = None) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown task variant {self.variant!r}")
        if self.variant == "typing":
            if not self.words:
                raise ValidationError("typing example needs words")
            _check_span(self.target_span, len(self.words), "target span")
            if labels is not None and self.gold_types is not None:
                bad = set(self.gold_types) - set(labels)
                if bad:
                    raise ValidationError(f"gold types outside label space: {sorted(bad)}")
        elif self.variant == "relation":
            if not self.words:
                raise ValidationError("relation example needs words")
            _check_span(self.head_span, len(self.words), "head span")
            _check_span(self.tail_span, len(self.words), "tail span")
            if labels is not None and self.gold_relation is not None:
                if self.gold_relation not in labels:
                    raise ValidationError(f"gold relation {self.gold_relation!r} not in label space")
        elif self.variant == "ner":
            if not self.words:
                raise ValidationError("ner example needs words")
            for start, end, name in self.gold_spans or []:
                _check_span((start, end), len(self.words), "gold span")
                if labels is not None and name not in labels:
                    raise ValidationError(f"gold entity type {name!r} not in label space")
        elif self.variant == "cloze":
            if self.question is None or self.passage is None:
                raise ValidationError("cloze example needs question and passage")
            _check_span(self.placeholder_span, len(self.question), "placeholder span")
            if not self.passage_spans:
                raise ValidationError("cloze example needs passage entity spans")
            for span in self.passage_spans:
                _check_span(span, len(self.passage), "passage span")
            if self.answer_indices is not None:
                if not self.answer_indices:
                    raise ValidationError("cloze example needs at least one positive span")
                if any(not 0 <= i < len(self.passage_spans) for i in self.answer_indices):
                    raise ValidationError("answer index out of range")
        elif self.variant == "extractive":
            if self.question is None or self.passage is None:
                raise ValidationError("extractive example needs question and passage")
            if self.answer_span is not None:
                _check_span(self.answer_span, len(self.passage), "answer span")
            for title, start, end in (self.question_entities or []):
                _check_span((start, end), len(self.question), f"question entity {title!r}")
            for title, start, end in (self.passage_entities or []):
                _check_span((start, end), len(self.passage), f"passage entity {title!r}")

    def to_json(self) -> str:
        record = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(record, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, record: dict) -> "TaskExample":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(record) - known)
        if unknown:
            raise ValidationError(f"unknown task example fields: {unknown}")
        example = cls(**record)
        # JSON round-trips tuples as lists; normalize
        for name in ("target_span", "head_span", "tail_span", "placeholder_span", "answer_span"):
            value = getattr(example, name)
            if value is not None:
                setattr(example, name, tuple(value))
        if example.gold_spans is not None:
            example.gold_spans = [tuple(s) for s in example.gold_spans]
        if example.passage_spans is not None:
            example.passage_spans = [tuple(s) for s in example.passage_spans]
        for name in ("question_entities", "passage_entities"):
            value = getattr(example, name)
            if value is not None:
                setattr(example, name, [tuple(e) for e in value])
        return example


@dataclass
class TaskDataset:
    variant: str
    labels: list[str] = field(default_factory=list)
    examples: list[TaskExample] = field(default_factory=list)

    def validate(self) -> "TaskDataset":
        for example in self.examples:
            if example.variant != self.variant:
                raise ValidationError(
                    f"example {example.example_id} variant {example.variant!r} "
                    f"does not match dataset variant {self.variant!r}"
                )
            example.validate(self.labels or None)
        return self

    def save(self, path: str | Path) -> None:
        header = {"meta": {"variant": self.variant, "labels": self.labels}}
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(example.to_json() for example in self.examples)
        write_atomic_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TaskDataset":
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        if not lines:
            raise ValidationError(f"empty task dataset file {path}")
        header = json.loads(lines[0])
        if "meta" not in header:
            raise ValidationError("task dataset file is missing its meta header line")
        meta = header["meta"]
        examples = [TaskExample.from_dict(json.loads(line)) for line in lines[1:]]
        return cls(variant=meta["variant"], labels=list(meta["labels"]), examples=examples).validate()

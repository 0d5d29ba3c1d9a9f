"""Entity-annotated documents: the ingestion unit and its file format.

Corpus files are UTF-8 JSON-lines, one document per line:
``{"id": str, "words": [str], "entities": [{"title": str, "start": int, "end": int}]}``
with ``end`` exclusive.  Annotations must be in-range and non-overlapping.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from ..errors import CorpusError

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True, order=True)
class Annotation:
    title: str
    start: int
    end: int  # exclusive

    def surface(self, words: list[str]) -> str:
        return " ".join(w.lower() for w in words[self.start : self.end])


@dataclass
class AnnotatedDocument:
    id: str
    words: list[str]
    annotations: list[Annotation] = field(default_factory=list)

    def validate(self) -> None:
        prev_end = 0
        ordered = sorted(self.annotations, key=lambda a: (a.start, a.end))
        for ann in ordered:
            if not (0 <= ann.start < ann.end <= len(self.words)):
                raise CorpusError(
                    f"document {self.id!r}: annotation {ann.title!r} span "
                    f"[{ann.start}, {ann.end}) out of range for {len(self.words)} words"
                )
            if ann.start < prev_end:
                raise CorpusError(
                    f"document {self.id!r}: annotation {ann.title!r} at "
                    f"[{ann.start}, {ann.end}) overlaps a previous annotation"
                )
            prev_end = ann.end
        self.annotations = ordered


def _parse_line(doc_obj, line_no: int) -> AnnotatedDocument:
    if not isinstance(doc_obj, dict):
        raise CorpusError(f"line {line_no}: expected a JSON object")
    try:
        doc_id = doc_obj["id"]
        words = doc_obj["words"]
        raw_entities = doc_obj.get("entities", [])
    except KeyError as exc:
        raise CorpusError(f"line {line_no}: missing field {exc}") from None
    if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
        raise CorpusError(f"line {line_no}: 'words' must be a list of strings")
    annotations = []
    for ent in raw_entities:
        try:
            annotations.append(Annotation(ent["title"], int(ent["start"]), int(ent["end"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"line {line_no}: bad entity entry {ent!r}: {exc}") from None
    doc = AnnotatedDocument(id=str(doc_id), words=list(words), annotations=annotations)
    try:
        doc.validate()
    except CorpusError as exc:
        raise CorpusError(f"line {line_no}: {exc}") from None
    return doc


def ingest(path: str | Path) -> Iterator[AnnotatedDocument]:
    """Stream validated documents from a JSON-lines corpus file."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON: {exc}") from None
            yield _parse_line(obj, line_no)


def write_corpus(docs: Iterable[AnnotatedDocument], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for doc in docs:
            record = {
                "id": doc.id,
                "words": doc.words,
                "entities": [
                    {"title": a.title, "start": a.start, "end": a.end} for a in doc.annotations
                ],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")

"""Word and entity vocabularies with deterministic frequency ranking."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .._io import write_atomic_text
from ..errors import ValidationError
from .documents import AnnotatedDocument

PAD_WORD = "[PAD]"
CLS_WORD = "[CLS]"
SEP_WORD = "[SEP]"
MASK_WORD = "[MASK_WORD]"
UNK_WORD = "[UNK_WORD]"
WORD_SPECIALS = (PAD_WORD, CLS_WORD, SEP_WORD, MASK_WORD, UNK_WORD)

MASK_ENTITY = "[MASK]"
UNK_ENTITY = "[UNK]"
ENTITY_SPECIALS = (MASK_ENTITY, UNK_ENTITY)


@dataclass
class Vocabulary:
    """Frequency-ranked word and entity id maps.

    Ids are assigned specials-first, then by descending frequency with a
    lexicographic tie-break, so a fixed corpus always yields the same maps
    regardless of document order.
    """

    word_to_id: dict[str, int]
    entity_to_id: dict[str, int]
    entity_frequencies: dict[str, int] = field(default_factory=dict)
    word_frequencies: dict[str, int] = field(default_factory=dict)

    @property
    def num_words(self) -> int:
        return len(self.word_to_id)

    @property
    def num_entities(self) -> int:
        return len(self.entity_to_id)

    @property
    def pad_id(self) -> int:
        return self.word_to_id[PAD_WORD]

    @property
    def cls_id(self) -> int:
        return self.word_to_id[CLS_WORD]

    @property
    def sep_id(self) -> int:
        return self.word_to_id[SEP_WORD]

    @property
    def mask_word_id(self) -> int:
        return self.word_to_id[MASK_WORD]

    @property
    def unk_word_id(self) -> int:
        return self.word_to_id[UNK_WORD]

    @property
    def mask_entity_id(self) -> int:
        return self.entity_to_id[MASK_ENTITY]

    @property
    def unk_entity_id(self) -> int:
        return self.entity_to_id[UNK_ENTITY]

    def special_word_ids(self) -> set[int]:
        return {self.word_to_id[w] for w in WORD_SPECIALS}

    def word_id(self, word: str) -> int:
        return self.word_to_id.get(word.lower(), self.word_to_id[UNK_WORD])

    def entity_id(self, title: str) -> int:
        return self.entity_to_id.get(title, self.entity_to_id[UNK_ENTITY])

    def words_in_order(self) -> list[str]:
        return sorted(self.word_to_id, key=self.word_to_id.get)

    def entities_in_order(self) -> list[str]:
        return sorted(self.entity_to_id, key=self.entity_to_id.get)

    def to_json(self) -> str:
        payload = {
            "words": self.words_in_order(),
            "entities": self.entities_in_order(),
            "entity_frequencies": dict(sorted(self.entity_frequencies.items())),
            "word_frequencies": dict(sorted(self.word_frequencies.items())),
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))

    def checksum(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        write_atomic_text(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            word_to_id={w: i for i, w in enumerate(payload["words"])},
            entity_to_id={e: i for i, e in enumerate(payload["entities"])},
            entity_frequencies={k: int(v) for k, v in payload["entity_frequencies"].items()},
            word_frequencies={k: int(v) for k, v in payload.get("word_frequencies", {}).items()},
        )


def _ranked(counts: Counter, limit: int) -> list[str]:
    return [name for name, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:limit]]


def build_vocab(docs: Iterable[AnnotatedDocument], max_words: int, max_entities: int) -> Vocabulary:
    """Rank words and entity titles by corpus frequency and assign ids.

    ``max_words`` / ``max_entities`` bound the vocabulary sizes including
    specials; rarer items fall off and later map to the unknown tokens.
    """
    if max_entities < len(ENTITY_SPECIALS):
        raise ValidationError(f"max_entities must be >= {len(ENTITY_SPECIALS)}, got {max_entities}")
    if max_words < len(WORD_SPECIALS):
        raise ValidationError(f"max_words must be >= {len(WORD_SPECIALS)}, got {max_words}")

    word_counts: Counter = Counter()
    entity_counts: Counter = Counter()
    for doc in docs:
        word_counts.update(w.lower() for w in doc.words)
        entity_counts.update(a.title for a in doc.annotations)
    for special in WORD_SPECIALS:
        word_counts.pop(special.lower(), None)

    words = list(WORD_SPECIALS) + _ranked(word_counts, max_words - len(WORD_SPECIALS))
    entities = list(ENTITY_SPECIALS) + _ranked(entity_counts, max_entities - len(ENTITY_SPECIALS))
    kept_entities = set(entities)
    return Vocabulary(
        word_to_id={w: i for i, w in enumerate(words)},
        entity_to_id={e: i for i, e in enumerate(entities)},
        entity_frequencies={t: c for t, c in sorted(entity_counts.items()) if t in kept_entities},
        word_frequencies={w: int(word_counts[w]) for w in words[len(WORD_SPECIALS) :]},
    )

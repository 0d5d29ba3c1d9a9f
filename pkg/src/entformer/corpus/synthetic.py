"""Deterministic synthetic annotated corpus for desk-scale experiments.

Every entity owns a fixed multi-word surface name whose words appear nowhere
else, so masked entities are recoverable from their visible span words and
masked span words are recoverable from the entity token: the cross-modal
signal the architecture is built to exploit, at a size a laptop can overfit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .documents import AnnotatedDocument, Annotation

_CONNECTIVES = ("the", "and", "near")


@dataclass
class SynthWorld:
    """Shared entity universe for the synthetic corpus and task datasets."""

    num_entities: int = 48
    title_width: int = 3

    titles: list[str] = field(init=False)
    title_words: dict[str, list[str]] = field(init=False)

    def __post_init__(self):
        self.titles = [f"Topic_{i:02d}" for i in range(self.num_entities)]
        self.title_words = {
            title: [f"t{i:02d}{chr(ord('a') + j)}" for j in range(self.title_width)]
            for i, title in enumerate(self.titles)
        }

    def type_bucket(self, title: str, num_buckets: int) -> int:
        return self.titles.index(title) % num_buckets

    def connectives(self) -> tuple[str, ...]:
        return _CONNECTIVES


def make_sentence(world: SynthWorld, rng: np.random.Generator) -> tuple[list[str], list[Annotation]]:
    """Three distinct entity mentions joined by fixed connectives."""
    picks = rng.choice(world.num_entities, size=3, replace=False)
    words: list[str] = []
    annotations: list[Annotation] = []
    for connective, pick in zip(_CONNECTIVES, picks):
        words.append(connective)
        title = world.titles[int(pick)]
        start = len(words)
        words.extend(world.title_words[title])
        annotations.append(Annotation(title, start, len(words)))
    return words, annotations


def generate_corpus(
    num_docs: int, seed: int, world: SynthWorld | None = None
) -> list[AnnotatedDocument]:
    world = world or SynthWorld()
    docs = []
    for i in range(num_docs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        words, annotations = make_sentence(world, rng)
        doc = AnnotatedDocument(id=f"doc{i:04d}", words=words, annotations=annotations)
        doc.validate()
        docs.append(doc)
    return docs

"""Surface-name -> entity dictionary with link probabilities, plus the
dictionary-based annotator used to add entity annotations to plain text."""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .._io import write_atomic_text
from ..errors import ValidationError
from .documents import AnnotatedDocument, Annotation


def _count_nonoverlapping(haystack: list[str], needle: tuple[str, ...]) -> int:
    """Greedy left-to-right count of non-overlapping needle occurrences."""
    n, m = len(haystack), len(needle)
    count = 0
    i = 0
    while i <= n - m:
        if tuple(haystack[i : i + m]) == needle:
            count += 1
            i += m
        else:
            i += 1
    return count


class EntityDictionary:
    """Maps lowercased surface names to candidate entities with counts.

    ``link_probability(name)`` is the fraction of a name's total mention
    occurrences that were annotated (hyperlinked), pooled over all entities
    the name links to.  Total counts are mention-level and non-overlapping.
    """

    def __init__(self):
        self._links: dict[str, dict[str, int]] = defaultdict(dict)
        self._totals: dict[str, int] = {}
        self._total_links: dict[str, int] = {}

    def add_link(self, name: str, title: str, count: int = 1) -> None:
        name = name.lower()
        self._links[name][title] = self._links[name].get(title, 0) + count
        self._total_links[name] = self._total_links.get(name, 0) + count

    def set_total(self, name: str, total: int) -> None:
        if total < 0:
            raise ValidationError(f"negative total count for {name!r}")
        self._totals[name.lower()] = total

    def names(self) -> list[str]:
        return sorted(self._links)

    def entities(self, name: str) -> list[tuple[str, int]]:
        return sorted(self._links.get(name.lower(), {}).items())

    def total_count(self, name: str) -> int:
        return self._totals.get(name.lower(), 0)

    def link_count(self, name: str) -> int:
        return self._total_links.get(name.lower(), 0)

    def link_probability(self, name: str) -> float:
        name = name.lower()
        total = self._totals.get(name, 0)
        if total == 0:
            return 0.0
        p = self._total_links.get(name, 0) / total
        assert 0.0 <= p <= 1.0, (name, p)
        return p

    def scoped_to(self, page_links: Mapping[str, Iterable[str]]) -> "EntityDictionary":
        """Restrict name->entity pairs to one page's links, keeping global counts."""
        scoped = EntityDictionary()
        for raw_name, titles in page_links.items():
            name = raw_name.lower()
            if name not in self._links:
                continue
            kept = False
            for title in set(titles):
                if title in self._links[name]:
                    scoped._links[name][title] = self._links[name][title]
                    kept = True
            if kept:
                scoped._totals[name] = self._totals.get(name, 0)
                scoped._total_links[name] = self._total_links.get(name, 0)
        return scoped

    def save_tsv(self, path: str | Path) -> None:
        buffer = io.StringIO()
        writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
        writer.writerow(["name", "entity_title", "link_count", "total_count"])
        for name in self.names():
            for title, link_count in self.entities(name):
                writer.writerow([name, title, link_count, self._totals.get(name, 0)])
        write_atomic_text(path, buffer.getvalue())

    @classmethod
    def load_tsv(cls, path: str | Path) -> "EntityDictionary":
        dictionary = cls()
        with Path(path).open("r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle, delimiter="\t")
            header = next(reader, None)
            if header != ["name", "entity_title", "link_count", "total_count"]:
                raise ValidationError(f"unexpected dictionary header: {header!r}")
            for row in reader:
                name, title, link_count, total_count = row
                dictionary.add_link(name, title, int(link_count))
                dictionary.set_total(name, int(total_count))
        return dictionary


def build_dictionary(docs: Sequence[AnnotatedDocument]) -> EntityDictionary:
    """Collect link counts from annotations and mention totals from raw text."""
    dictionary = EntityDictionary()
    link_counts: Counter = Counter()
    for doc in docs:
        for ann in doc.annotations:
            link_counts[(ann.surface(doc.words), ann.title)] += 1
    for (name, title), count in sorted(link_counts.items()):
        dictionary.add_link(name, title, count)

    needles = {name: tuple(name.split(" ")) for name in dictionary.names()}
    totals = dict.fromkeys(needles, 0)
    for doc in docs:
        lowered = [w.lower() for w in doc.words]
        for name, needle in needles.items():
            totals[name] += _count_nonoverlapping(lowered, needle)
    for name, total in totals.items():
        dictionary.set_total(name, total)
    return dictionary


def _match_candidates(
    words: list[str], eligible: Mapping[str, str]
) -> list[tuple[int, int, str]]:
    lowered = [w.lower() for w in words]
    found = []
    for name, title in eligible.items():
        needle = name.split(" ")
        m = len(needle)
        for start in range(0, len(lowered) - m + 1):
            if lowered[start : start + m] == needle:
                found.append((start, start + m, title))
    return found


def annotate(
    question_words: list[str],
    passage_words: list[str],
    page_dictionary: EntityDictionary,
    threshold: float = 0.01,
) -> tuple[list[Annotation], list[Annotation]]:
    """String-match dictionary names against question and passage words.

    A name participates only if it maps to exactly one entity in the
    page-scoped dictionary and its link probability is >= ``threshold``.
    Overlaps resolve longest-match-first, then leftmost.
    """
    eligible: dict[str, str] = {}
    for name in page_dictionary.names():
        entries = page_dictionary.entities(name)
        if len(entries) != 1:
            continue  # ambiguous on this page
        if page_dictionary.link_probability(name) < threshold:
            continue
        eligible[name] = entries[0][0]

    results = []
    for words in (question_words, passage_words):
        candidates = _match_candidates(words, eligible)
        candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
        taken: list[tuple[int, int]] = []
        accepted = []
        for start, end, title in candidates:
            if any(start < t_end and t_start < end for t_start, t_end in taken):
                continue
            taken.append((start, end))
            accepted.append(Annotation(title, start, end))
        accepted.sort(key=lambda a: a.start)
        results.append(accepted)
    return results[0], results[1]

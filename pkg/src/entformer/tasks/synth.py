"""Rule-governed synthetic datasets for the five tasks.

Labels are deterministic functions of the entity identities drawn from the
same :class:`SynthWorld` the synthetic pretraining corpus uses, so every
word a task example contains is in the pretraining vocabulary and a
sufficiently expressive model can reach perfect scores.  ``rule_prediction``
applies the generating rule directly, giving a Bayes-optimal reference.
"""

from __future__ import annotations

import numpy as np

from ..corpus.synthetic import SynthWorld
from ..errors import ValidationError
from .data import TaskDataset, TaskExample

_STREAM = {"typing": 1, "relation": 2, "ner": 3, "cloze": 4, "extractive": 5}

TYPING_LABELS = ["kind0", "kind1", "kind2", "kind3", "even", "odd"]
RELATION_LABELS = ["no_relation", "rel1", "rel2", "rel3", "rel4", "rel5"]
NER_LABELS = ["cat0", "cat1", "cat2", "cat3"]


def typing_rule(entity_index: int) -> list[str]:
    return [f"kind{entity_index % 4}", "even" if entity_index % 2 == 0 else "odd"]


def relation_rule(head_index: int, tail_index: int) -> str:
    return RELATION_LABELS[(3 * (head_index % 6) + 5 * (tail_index % 6)) % 6]


def ner_rule(entity_index: int) -> str:
    return NER_LABELS[entity_index % 4]


def _mention(world: SynthWorld, words: list[str], connective: str, index: int) -> tuple[int, int]:
    words.append(connective)
    start = len(words)
    words.extend(world.title_words[world.titles[index]])
    return start, len(words)


def _three_mention_sentence(world, rng) -> tuple[list[str], list[tuple[int, int]], list[int]]:
    picks = [int(i) for i in rng.choice(world.num_entities, size=3, replace=False)]
    words: list[str] = []
    spans = [
        _mention(world, words, connective, idx)
        for connective, idx in zip(("the", "and", "near"), picks)
    ]
    return words, spans, picks


def _gen_typing(world, rng, example_id):
    words, spans, picks = _three_mention_sentence(world, rng)
    slot = int(rng.integers(3))
    return TaskExample(
        variant="typing",
        example_id=example_id,
        words=words,
        target_span=spans[slot],
        gold_types=typing_rule(picks[slot]),
    )


def _gen_relation(world, rng, example_id):
    words, spans, picks = _three_mention_sentence(world, rng)
    head_slot, tail_slot = rng.permutation(3)[:2]
    head_slot, tail_slot = int(head_slot), int(tail_slot)
    return TaskExample(
        variant="relation",
        example_id=example_id,
        words=words,
        head_span=spans[head_slot],
        tail_span=spans[tail_slot],
        gold_relation=relation_rule(picks[head_slot], picks[tail_slot]),
    )


def _gen_ner(world, rng, example_id):
    words, spans, picks = _three_mention_sentence(world, rng)
    return TaskExample(
        variant="ner",
        example_id=example_id,
        words=words,
        gold_spans=[(s, e, ner_rule(i)) for (s, e), i in zip(spans, picks)],
    )


def _gen_cloze(world, rng, example_id):
    # passage sentence 1: cue + answer; sentence 2: two distractors, sometimes
    # closing with a second mention of the answer (multi-span positive case)
    cue, answer, d1, d2 = (int(i) for i in rng.choice(world.num_entities, size=4, replace=False))
    passage: list[str] = []
    spans = [
        _mention(world, passage, "the", cue),
        _mention(world, passage, "and", answer),
        _mention(world, passage, "the", d1),
        _mention(world, passage, "and", d2),
    ]
    entities = [cue, answer, d1, d2]
    if rng.random() < 0.3:
        spans.append(_mention(world, passage, "near", answer))
        entities.append(answer)
    question = ["the"] + world.title_words[world.titles[cue]] + ["and", "the"]
    placeholder = (len(question) - 1, len(question))
    return TaskExample(
        variant="cloze",
        example_id=example_id,
        question=question,
        passage=passage,
        placeholder_span=placeholder,
        passage_spans=spans,
        answer_indices=[i for i, e in enumerate(entities) if e == answer],
    )


def _gen_extractive(world, rng, example_id):
    picks = [int(i) for i in rng.choice(world.num_entities, size=6, replace=False)]
    passage: list[str] = []
    spans = []
    for base in (0, 3):
        for connective, idx in zip(("the", "and", "near"), picks[base : base + 3]):
            spans.append(_mention(world, passage, connective, idx))
    sentence = int(rng.integers(2))          # which sentence holds the cue
    cue = picks[3 * sentence]                # sentence-initial mention
    answer_span = spans[3 * sentence + 1]    # the mention that follows it
    question = ["the"] + world.title_words[world.titles[cue]] + ["and"]
    return TaskExample(
        variant="extractive",
        example_id=example_id,
        question=question,
        passage=passage,
        answer_span=answer_span,
        question_entities=[(world.titles[cue], 1, 4)],
        passage_entities=[
            (world.titles[idx], s, e) for idx, (s, e) in zip(picks, spans)
        ],
    )


_GENERATORS = {
    "typing": _gen_typing,
    "relation": _gen_relation,
    "ner": _gen_ner,
    "cloze": _gen_cloze,
    "extractive": _gen_extractive,
}

_LABELS = {
    "typing": TYPING_LABELS,
    "relation": RELATION_LABELS,
    "ner": NER_LABELS,
    "cloze": [],
    "extractive": [],
}


def synth_generate(
    variant: str, seed: int, size: int, world: SynthWorld | None = None
) -> TaskDataset:
    if variant not in _GENERATORS:
        raise ValidationError(f"unknown task variant {variant!r}")
    world = world or SynthWorld()
    examples = []
    for index in range(size):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM[variant], index]))
        examples.append(_GENERATORS[variant](world, rng, f"{variant}-{seed}-{index}"))
    return TaskDataset(variant=variant, labels=list(_LABELS[variant]), examples=examples).validate()


def _entity_at(world: SynthWorld, words: list[str], span: tuple[int, int]) -> int:
    surface = words[span[0] : span[1]]
    for index, title in enumerate(world.titles):
        if world.title_words[title] == surface:
            return index
    raise ValidationError(f"no entity matches surface {surface!r}")


def _sentences(words: list[str]) -> list[tuple[int, int]]:
    """Generator sentences start at each 'the'; returns (start, end) ranges."""
    starts = [i for i, w in enumerate(words) if w == "the"] + [len(words)]
    return list(zip(starts, starts[1:]))


def rule_prediction(example: TaskExample, world: SynthWorld | None = None):
    """Apply the generating rule to the example surface (the Bayes-optimal
    classifier); returns the same prediction type the model heads produce."""
    world = world or SynthWorld()
    if example.variant == "typing":
        return typing_rule(_entity_at(world, example.words, example.target_span))
    if example.variant == "relation":
        return relation_rule(
            _entity_at(world, example.words, example.head_span),
            _entity_at(world, example.words, example.tail_span),
        )
    if example.variant == "ner":
        spans = []
        for start in range(len(example.words)):
            for end in range(start + 1, len(example.words) + 1):
                surface = example.words[start:end]
                for index, title in enumerate(world.titles):
                    if world.title_words[title] == surface:
                        spans.append((start, end, ner_rule(index)))
        return sorted(spans)
    if example.variant == "cloze":
        cue = _entity_at(world, example.question, (1, 4))
        entities = [_entity_at(world, example.passage, span) for span in example.passage_spans]
        for lo, hi in _sentences(example.passage):
            members = [
                (i, e) for i, (e, (s, _)) in enumerate(zip(entities, example.passage_spans))
                if lo <= s < hi
            ]
            if any(e == cue for _, e in members):
                others = {e for _, e in members if e != cue}
                if len(others) != 1:
                    raise ValidationError("cue sentence does not have a unique co-occurring entity")
                answer = others.pop()
                return min(i for i, e in enumerate(entities) if e == answer)
        raise ValidationError("cue entity not found in passage")
    if example.variant == "extractive":
        cue = _entity_at(world, example.question, (1, 4))
        mentions = sorted(
            (s, e, _entity_at(world, example.passage, (s, e)))
            for _, s, e in example.passage_entities
        )
        for lo, hi in _sentences(example.passage):
            members = [(s, e, ent) for s, e, ent in mentions if lo <= s < hi]
            if any(ent == cue for _, _, ent in members):
                following = [m for m in members if m[0] > next(
                    s for s, _, ent in members if ent == cue
                )]
                if not following:
                    raise ValidationError("no mention follows the cue in its sentence")
                s, e, _ = following[0]
                return (s, e)
        raise ValidationError("cue entity not found in passage")
    raise ValidationError(f"unknown task variant {example.variant!r}")

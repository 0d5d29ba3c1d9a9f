"""Dynamic masking plans for the joint word/entity denoising objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus.vocab import Vocabulary
from ..corpus.windows import TrainingSequence
from ..errors import ValidationError
from ..model.batch import Batch, build_batch

MASK = "mask"
RANDOM = "random"
KEEP = "keep"


@dataclass(frozen=True)
class WordMask:
    position: int
    action: str           # mask | random | keep
    gold_id: int
    replacement_id: int   # id actually placed in the input


@dataclass(frozen=True)
class EntityMask:
    index: int
    gold_id: int


@dataclass
class MaskingPlan:
    word_masks: list[WordMask] = field(default_factory=list)
    entity_masks: list[EntityMask] = field(default_factory=list)


def plan_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Masking is a pure function of (seed, epoch, sequence index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def make_masking_plan(
    seq: TrainingSequence,
    rng: np.random.Generator,
    p_word: float,
    p_entity: float,
    vocab: Vocabulary,
    word_split: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> MaskingPlan:
    """Bernoulli(p) per token; selected words get the mask/random/keep split,
    selected entities are always replaced by the mask entity.  Special word
    tokens are never candidates; unknown-entity golds stay eligible."""
    if abs(sum(word_split) - 1.0) > 1e-9:
        raise ValidationError(f"word_split must sum to 1, got {word_split}")
    specials = vocab.special_word_ids()
    num_random_candidates = vocab.num_words - len(specials)
    plan = MaskingPlan()
    for position, word_id in enumerate(seq.word_ids):
        if word_id in specials:
            continue
        if rng.random() >= p_word:
            continue
        roll = rng.random()
        if roll < word_split[0]:
            action, replacement = MASK, vocab.mask_word_id
        elif roll < word_split[0] + word_split[1]:
            action = RANDOM
            replacement = len(specials) + int(rng.integers(num_random_candidates))
        else:
            action, replacement = KEEP, word_id
        plan.word_masks.append(WordMask(position, action, word_id, replacement))
    for index, entity_id in enumerate(seq.entity_ids):
        if rng.random() < p_entity:
            plan.entity_masks.append(EntityMask(index, entity_id))
    return plan


def build_pretrain_batch(
    sequences: list[TrainingSequence],
    plans: list[MaskingPlan],
    vocab: Vocabulary,
    dtype: str = "f32",
) -> Batch:
    """Apply plans to the inputs and record gold labels at masked slots."""
    if len(sequences) != len(plans):
        raise ValidationError(
            f"{len(plans)} masking plans for {len(sequences)} sequences"
        )
    word_overrides, entity_overrides = [], []
    word_labels, entity_labels = [], []
    for i, (seq, plan) in enumerate(zip(sequences, plans)):
        words = list(seq.word_ids)
        w_labels = [-1] * len(words)
        for wm in plan.word_masks:
            if not 0 <= wm.position < len(words):
                raise ValidationError(f"plan {i} masks word position {wm.position} out of range")
            if wm.gold_id != seq.word_ids[wm.position]:
                raise ValidationError(f"plan {i} gold word disagrees with sequence at {wm.position}")
            if not 0 <= wm.gold_id < vocab.num_words:
                raise ValidationError(f"plan {i} gold word id {wm.gold_id} out of vocabulary")
            words[wm.position] = wm.replacement_id
            w_labels[wm.position] = wm.gold_id
        entities = list(seq.entity_ids)
        e_labels = [-1] * len(entities)
        for em in plan.entity_masks:
            if not 0 <= em.index < len(entities):
                raise ValidationError(f"plan {i} masks entity index {em.index} out of range")
            if em.gold_id != seq.entity_ids[em.index]:
                raise ValidationError(f"plan {i} gold entity disagrees with sequence at {em.index}")
            if not 0 <= em.gold_id < vocab.num_entities:
                raise ValidationError(f"plan {i} gold entity id {em.gold_id} out of vocabulary")
            entities[em.index] = vocab.mask_entity_id
            e_labels[em.index] = em.gold_id
        word_overrides.append(words)
        entity_overrides.append(entities)
        word_labels.append(w_labels)
        entity_labels.append(e_labels)
    return build_batch(
        sequences,
        pad_word_id=vocab.pad_id,
        dtype=dtype,
        word_ids_override=word_overrides,
        entity_ids_override=entity_overrides,
        word_labels=word_labels,
        entity_labels=entity_labels,
    )

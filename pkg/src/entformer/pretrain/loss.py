"""Joint denoising loss: mean cross-entropy over masked words plus mean
cross-entropy over masked entities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..model.batch import Batch
from ..model.config import ModelConfig
from ..model.encoder import encode_batch
from ..model.params import ModelParams
from ..numerics import Tensor, ops
from .heads import entity_prediction_logits, mlm_logits
from .masking import MaskingPlan


@dataclass
class PretrainLossResult:
    loss: Tensor                 # scalar, on the active tape
    mlm_loss: float
    entity_loss: float
    mlm_correct: int = 0
    mlm_total: int = 0
    entity_correct: int = 0
    entity_total: int = 0
    degenerate: bool = False

    @property
    def mlm_accuracy(self) -> float:
        return self.mlm_correct / self.mlm_total if self.mlm_total else 0.0

    @property
    def entity_accuracy(self) -> float:
        return self.entity_correct / self.entity_total if self.entity_total else 0.0


def _masked_term(h, labels: np.ndarray, logits_fn, vocab_size: int):
    """Mean NLL over the labelled slots of a (B, T, D) representation."""
    flat_labels = labels.reshape(-1)
    selected = np.nonzero(flat_labels >= 0)[0]
    if selected.size == 0:
        return None, 0.0, 0, 0
    golds = flat_labels[selected]
    if golds.max() >= vocab_size:
        raise ValidationError(f"gold id {golds.max()} out of vocabulary ({vocab_size})")
    b, t, d = h.shape
    rows = ops.gather_rows(ops.reshape(h, (b * t, d)), selected)
    logits = logits_fn(rows)
    log_probs = ops.log_softmax(logits, axis=-1)
    term = ops.scale(ops.mean_all(ops.pick(log_probs, golds)), -1.0)
    predictions = np.argmax(logits.data, axis=-1)
    return term, term.item(), int((predictions == golds).sum()), int(golds.size)


def _validate_plans(batch: Batch, plans: list[MaskingPlan]) -> None:
    if len(plans) != batch.size:
        raise ValidationError(f"{len(plans)} plans for a batch of {batch.size}")
    for i, plan in enumerate(plans):
        seq = batch.sequences[i]
        for wm in plan.word_masks:
            if not 0 <= wm.position < seq.num_words:
                raise ValidationError(f"plan {i} word position {wm.position} out of range")
            if batch.word_labels is None or batch.word_labels[i, wm.position] != wm.gold_id:
                raise ValidationError(f"plan {i} misaligned with batch labels at word {wm.position}")
        for em in plan.entity_masks:
            if not 0 <= em.index < seq.num_entities:
                raise ValidationError(f"plan {i} entity index {em.index} out of range")
            if batch.entity_labels is None or batch.entity_labels[i, em.index] != em.gold_id:
                raise ValidationError(f"plan {i} misaligned with batch labels at entity {em.index}")


def pretrain_loss(
    batch: Batch,
    params: ModelParams,
    plans: list[MaskingPlan] | None = None,
    config: ModelConfig | None = None,
    entity_loss_enabled: bool = True,
    rng: np.random.Generator | None = None,
) -> PretrainLossResult:
    """Compute the joint loss for one masked batch.

    ``plans`` is optional cross-validation against the labels already folded
    into the batch.  With no masked slots at all the loss is 0 and flagged
    degenerate.  Disabling the entity term reproduces word-only training;
    a model configured without entity inputs never sees the entity term.
    """
    config = config or params.config
    if plans is not None:
        _validate_plans(batch, plans)

    encoded = encode_batch(batch, params, config, rng=rng)
    word_labels = batch.word_labels if batch.word_labels is not None else -np.ones_like(batch.word_ids)

    term_w, mlm_loss, w_correct, w_total = _masked_term(
        encoded.h_words, word_labels, lambda rows: mlm_logits(rows, params), config.vocab_words
    )

    term_e = None
    ent_loss, e_correct, e_total = 0.0, 0, 0
    if entity_loss_enabled and config.use_entity_inputs and encoded.h_entities is not None:
        entity_labels = (
            batch.entity_labels if batch.entity_labels is not None else -np.ones_like(batch.entity_ids)
        )
        term_e, ent_loss, e_correct, e_total = _masked_term(
            encoded.h_entities,
            entity_labels,
            lambda rows: entity_prediction_logits(rows, params),
            config.vocab_entities,
        )

    if term_w is None and term_e is None:
        zero = Tensor(np.zeros((), dtype=encoded.h_words.dtype))
        return PretrainLossResult(loss=zero, mlm_loss=0.0, entity_loss=0.0, degenerate=True)
    if term_w is None:
        total = term_e
    elif term_e is None:
        total = term_w
    else:
        total = ops.add(term_w, term_e)
    return PretrainLossResult(
        loss=total,
        mlm_loss=mlm_loss,
        entity_loss=ent_loss,
        mlm_correct=w_correct,
        mlm_total=w_total,
        entity_correct=e_correct,
        entity_total=e_total,
    )

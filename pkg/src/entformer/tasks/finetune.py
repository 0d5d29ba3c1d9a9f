"""Task fine-tuning with dev-set early stopping, plus task evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..corpus.vocab import Vocabulary
from ..errors import ConfigError, ValidationError
from ..model.params import ModelParams
from ..numerics import Tape, ops
from ..pretrain.optim import AdamW, lr_schedule
from .data import TaskDataset, TaskExample, VARIANTS
from .decode import extractive_decode, ner_decode
from .heads import (
    cloze_forward,
    cloze_loss,
    extractive_forward,
    extractive_loss,
    install_task_head,
    ner_forward,
    ner_loss,
    ner_predictions,
    relation_forward,
    relation_loss,
    typing_forward,
    typing_loss,
)
from .metrics import PRIMARY_METRIC, metrics


@dataclass
class FinetuneConfig:
    task: str = "typing"
    steps: int = 500
    epochs: float | None = None    # overrides steps when set
    batch_size: int = 8
    lr: float = 3e-4
    warmup_ratio: float = 0.06
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    weight_decay: float = 0.01
    eval_interval: int = 100
    patience: int = 3
    seed: int = 0
    max_span_len: int = 16
    max_answer_len: int = 30
    ner_chunk_size: int = 128

    def problems(self) -> list[str]:
        issues = []
        if self.task not in VARIANTS:
            issues.append(f"task must be one of {VARIANTS}")
        if self.steps < 1:
            issues.append("steps must be >= 1")
        if self.epochs is not None and self.epochs <= 0:
            issues.append("epochs must be positive")
        if self.batch_size < 1:
            issues.append("batch_size must be >= 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            issues.append("warmup_ratio must be in [0, 1)")
        if self.eval_interval < 1:
            issues.append("eval_interval must be >= 1")
        if self.patience < 1:
            issues.append("patience must be >= 1")
        if self.max_span_len < 1:
            issues.append("max_span_len must be >= 1")
        if self.max_answer_len < 1:
            issues.append("max_answer_len must be >= 1")
        return issues

    def validate(self) -> "FinetuneConfig":
        issues = self.problems()
        if issues:
            raise ConfigError(issues)
        return self

    def total_steps(self, train_size: int) -> int:
        if self.epochs is None:
            return self.steps
        return max(1, int(np.ceil(self.epochs * train_size / self.batch_size)))


def task_forward_and_loss(
    example: TaskExample,
    params: ModelParams,
    vocab: Vocabulary,
    labels: list[str],
    cfg: FinetuneConfig,
):
    """Returns (loss Tensor or None when no gold, prediction record)."""
    variant = example.variant
    if variant == "typing":
        out = typing_forward(example, params, vocab)
        prediction = {
            "prediction": out.predicted_types(labels),
            "scores": [float(v) for v in out.logits.data],
        }
        loss = typing_loss(out, example.gold_types, labels) if example.gold_types is not None else None
        return loss, prediction
    if variant == "relation":
        out = relation_forward(example, params, vocab)
        prediction = {
            "prediction": out.predicted_relation(labels),
            "scores": [float(v) for v in out.logits.data],
        }
        loss = (
            relation_loss(out, example.gold_relation, labels)
            if example.gold_relation is not None
            else None
        )
        return loss, prediction
    if variant == "ner":
        out = ner_forward(
            example, params, vocab,
            max_span_len=cfg.max_span_len, chunk_size=cfg.ner_chunk_size,
        )
        decoded = ner_decode(ner_predictions(out, labels))
        prediction = {"prediction": [[s, e, t] for s, e, t in decoded]}
        loss = ner_loss(out, example.gold_spans, labels) if example.gold_spans is not None else None
        return loss, prediction
    if variant == "cloze":
        out = cloze_forward(example, params, vocab)
        index = out.predicted_index()
        span = example.passage_spans[index]
        prediction = {
            "prediction": index,
            "answer_words": example.passage[span[0] : span[1]],
            "scores": [float(v) for v in out.scores.data],
        }
        loss = cloze_loss(out, example.answer_indices) if example.answer_indices is not None else None
        return loss, prediction
    if variant == "extractive":
        out = extractive_forward(example, params, vocab)
        lo = out.passage_offset
        hi = lo + out.passage_len
        s, e = extractive_decode(
            out.start_logits.data, out.end_logits.data, lo, hi, cfg.max_answer_len
        )
        span = (s - lo, e - lo)
        prediction = {
            "prediction": [span[0], span[1]],
            "answer_words": example.passage[span[0] : span[1]],
            "score": float(out.start_logits.data[s] + out.end_logits.data[e - 1]),
        }
        loss = extractive_loss(out, example.answer_span) if example.answer_span is not None else None
        return loss, prediction
    raise ValidationError(f"unknown task variant {variant!r}")


def gold_answer_words(example: TaskExample) -> list[str]:
    if example.variant == "cloze":
        span = example.passage_spans[example.answer_indices[0]]
    else:
        span = example.answer_span
    return example.passage[span[0] : span[1]]


def evaluate_task(
    params: ModelParams,
    dataset: TaskDataset,
    vocab: Vocabulary,
    cfg: FinetuneConfig,
) -> tuple[dict | None, list[dict]]:
    """Deterministic evaluation; metrics are None when golds are missing."""
    if not dataset.examples:
        raise ValidationError("cannot evaluate an empty dataset")
    predictions = []
    for example in dataset.examples:
        _, record = task_forward_and_loss(example, params, vocab, dataset.labels, cfg)
        record["example_id"] = example.example_id
        predictions.append(record)
    if not all(example.has_gold() for example in dataset.examples):
        return None, predictions
    scores = score_predictions(dataset, predictions)
    return scores, predictions


def score_predictions(dataset: TaskDataset, predictions: list[dict]) -> dict:
    """Standalone scorer over emitted prediction records."""
    by_id = {p["example_id"]: p for p in predictions}
    missing = [e.example_id for e in dataset.examples if e.example_id not in by_id]
    if missing:
        raise ValidationError(f"predictions missing for examples: {missing[:5]}")
    variant = dataset.variant
    preds, golds = [], []
    for example in dataset.examples:
        record = by_id[example.example_id]
        if variant == "typing":
            preds.append(list(record["prediction"]))
            golds.append(list(example.gold_types))
        elif variant == "relation":
            preds.append(record["prediction"])
            golds.append(example.gold_relation)
        elif variant == "ner":
            preds.append([tuple(span) for span in record["prediction"]])
            golds.append([tuple(span) for span in example.gold_spans])
        else:
            preds.append(list(record["answer_words"]))
            golds.append(gold_answer_words(example))
    return metrics(variant, preds, golds)


@dataclass
class FinetuneResult:
    history: list[dict] = field(default_factory=list)
    best_metric: float = 0.0
    best_step: int = 0
    stopped_early: bool = False


def finetune(
    params: ModelParams,
    train: TaskDataset,
    dev: TaskDataset,
    vocab: Vocabulary,
    cfg: FinetuneConfig,
) -> FinetuneResult:
    """Train all parameters on the task loss; keep the best dev state."""
    cfg.validate()
    if train.variant != cfg.task or dev.variant != cfg.task:
        raise ValidationError(
            f"datasets are {train.variant!r}/{dev.variant!r} but config task is {cfg.task!r}"
        )
    if not train.examples:
        raise ValidationError("empty training dataset")
    for example in train.examples:
        if not example.has_gold():
            raise ValidationError(f"training example {example.example_id} has no gold label")

    head_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 23]))
    if cfg.task == "typing" and "task.typing_w" not in params:
        install_task_head(params, "typing", train.labels, head_rng)
    elif cfg.task == "relation" and "task.relation_w" not in params:
        install_task_head(params, "relation", train.labels, head_rng)
    elif cfg.task == "ner" and "task.ner_w" not in params:
        install_task_head(params, "ner", train.labels, head_rng,
                          use_entity_inputs=params.config.use_entity_inputs)
    elif cfg.task == "cloze" and "task.cloze_w" not in params:
        install_task_head(params, "cloze", train.labels, head_rng)
    elif cfg.task == "extractive" and "task.qa_start_w" not in params:
        install_task_head(params, "extractive", train.labels, head_rng)

    optimizer = AdamW(
        params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )
    total = cfg.total_steps(len(train.examples))
    warmup = int(cfg.warmup_ratio * total)
    primary = PRIMARY_METRIC[cfg.task]

    result = FinetuneResult()
    best_state: dict[str, np.ndarray] | None = None
    evals_since_best = 0
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 29]))
    queue: list[int] = []
    interval_loss = 0.0
    interval_batches = 0
    interval_start = time.monotonic()

    for step in range(total):
        batch: list[TaskExample] = []
        while len(batch) < cfg.batch_size:
            if not queue:
                queue = list(order_rng.permutation(len(train.examples)))
            batch.append(train.examples[queue.pop()])
        lr = lr_schedule(step + 1, warmup, total, cfg.lr)
        with Tape() as tape:
            losses = [
                task_forward_and_loss(example, params, vocab, train.labels, cfg)[0]
                for example in batch
            ]
            flat = [ops.reshape(loss, (1,)) for loss in losses]
            total_loss = ops.scale(ops.sum_all(ops.concat(flat, axis=0)), 1.0 / len(flat))
        tape.backward(total_loss)
        grads = {name: tape.gradient(t) for name, t in params.tensors.items()}
        optimizer.step(grads, lr)
        interval_loss += total_loss.item()
        interval_batches += 1

        done = step + 1
        if done % cfg.eval_interval == 0 or done == total:
            scores, _ = evaluate_task(params, dev, vocab, cfg)
            value = scores[primary]
            record = {
                "step": done,
                "lr": lr,
                "train_loss": interval_loss / max(interval_batches, 1),
                f"dev_{primary}": value,
                "wall_ms": (time.monotonic() - interval_start) * 1000.0,
            }
            result.history.append(record)
            interval_loss, interval_batches = 0.0, 0
            interval_start = time.monotonic()
            if value > result.best_metric or best_state is None:
                result.best_metric = value
                result.best_step = done
                best_state = {n: t.data.copy() for n, t in params.tensors.items()}
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    result.stopped_early = True
                    break

    if best_state is not None:
        for name, data in best_state.items():
            params.tensors[name].data[:] = data
    return result

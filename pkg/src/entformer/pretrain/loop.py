"""The pretraining loop: shuffled epochs, two-phase freezing, periodic
metrics and checkpoints.  Every stochastic choice derives functionally from
(seed, epoch, index), so a resumed run replays the interrupted one exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._io import write_atomic
from ..checkpoint import save_checkpoint
from ..corpus.vocab import Vocabulary
from ..corpus.windows import TrainingSequence
from ..errors import ConfigError, ValidationError
from ..model.params import ModelParams
from ..numerics import Tape
from .heads import add_pretrain_heads
from .loss import pretrain_loss
from .masking import build_pretrain_batch, make_masking_plan, plan_rng
from .optim import AdamW, lr_schedule

EVAL_EPOCH = 2**31  # masking stream reserved for evaluation

DEFAULT_FROZEN_GROUPS = ["embed.word", "embed.word_pos", "embed.ln_*", "layer*", "mlm.*"]


@dataclass
class PretrainConfig:
    total_steps: int = 200
    batch_size: int = 16
    warmup_steps: int = 10
    peak_lr_phase1: float = 5e-4
    peak_lr_phase2: float = 1e-5
    phase1_fraction: float = 0.5
    frozen_groups: list[str] = field(default_factory=lambda: list(DEFAULT_FROZEN_GROUPS))
    word_mask_prob: float = 0.15
    entity_mask_prob: float = 0.15
    word_mask_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    weight_decay: float = 0.01
    entity_loss_enabled: bool = True
    seed: int = 0
    log_interval: int = 10
    checkpoint_interval: int = 0   # 0: only the final checkpoint

    def problems(self) -> list[str]:
        issues = []
        if self.total_steps < 1:
            issues.append("total_steps must be >= 1")
        if self.batch_size < 1:
            issues.append("batch_size must be >= 1")
        if not 0.0 <= self.phase1_fraction <= 1.0:
            issues.append("phase1_fraction must be in [0, 1]")
        if not 0.0 <= self.word_mask_prob <= 1.0:
            issues.append("word_mask_prob must be in [0, 1]")
        if not 0.0 <= self.entity_mask_prob <= 1.0:
            issues.append("entity_mask_prob must be in [0, 1]")
        if abs(sum(self.word_mask_split) - 1.0) > 1e-9:
            issues.append("word_mask_split must sum to 1")
        if self.log_interval < 1:
            issues.append("log_interval must be >= 1")
        phase1 = int(self.total_steps * self.phase1_fraction)
        if 0 < phase1 <= self.warmup_steps:
            issues.append("phase-1 steps must exceed warmup_steps")
        return issues

    def validate(self) -> "PretrainConfig":
        issues = self.problems()
        if issues:
            raise ConfigError(issues)
        return self

    @property
    def phase1_steps(self) -> int:
        return int(self.total_steps * self.phase1_fraction)


class _EpochOrder:
    """Per-epoch permutations derived from the seed; cached lazily."""

    def __init__(self, seed: int, count: int):
        self.seed = seed
        self.count = count
        self._perms: dict[int, np.ndarray] = {}

    def position(self, global_pos: int) -> tuple[int, int]:
        epoch, offset = divmod(global_pos, self.count)
        perm = self._perms.get(epoch)
        if perm is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 997, epoch]))
            perm = rng.permutation(self.count)
            self._perms[epoch] = perm
        return epoch, int(perm[offset])


def learning_rate_at(step: int, cfg: PretrainConfig) -> float:
    """Piecewise schedule: each phase ramps/decays independently at its peak."""
    phase1 = cfg.phase1_steps
    if step < phase1:
        return lr_schedule(step + 1, cfg.warmup_steps, phase1, cfg.peak_lr_phase1)
    phase2_total = cfg.total_steps - phase1
    return lr_schedule(step - phase1 + 1, 0, phase2_total, cfg.peak_lr_phase2)


def _metric_record(step, lr, interval_stats, wall_ms) -> dict:
    mlm_n = max(interval_stats["mlm_total"], 1)
    ent_n = max(interval_stats["entity_total"], 1)
    return {
        "step": step,
        "lr": lr,
        "mlm_loss": interval_stats["mlm_loss"] / max(interval_stats["batches"], 1),
        "entity_loss": interval_stats["entity_loss"] / max(interval_stats["batches"], 1),
        "mlm_acc": interval_stats["mlm_correct"] / mlm_n,
        "entity_acc": interval_stats["entity_correct"] / ent_n,
        "wall_ms": wall_ms,
    }


def pretrain_loop(
    sequences: list[TrainingSequence],
    params: ModelParams,
    vocab: Vocabulary,
    cfg: PretrainConfig,
    run_config: dict | None = None,
    out_dir: str | Path | None = None,
    start_step: int = 0,
    optimizer: AdamW | None = None,
) -> tuple[list[dict], AdamW]:
    """Train in place; returns (metrics records, optimizer).

    Checkpoints land in ``out_dir`` as step-stamped files plus ``last.ckpt``;
    metrics append to ``metrics.jsonl`` one JSON record per logging interval.
    """
    cfg.validate()
    if not sequences:
        raise ValidationError("pretraining needs at least one sequence")
    run_config = run_config or {}
    if "mlm.dense_w" not in params:
        add_pretrain_heads(params, np.random.default_rng(np.random.SeedSequence([cfg.seed, 11])))
    if optimizer is None:
        optimizer = AdamW(
            params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )
    order = _EpochOrder(cfg.seed, len(sequences))
    frozen = params.matching(cfg.frozen_groups)
    metrics: list[dict] = []
    metrics_path = Path(out_dir) / "metrics.jsonl" if out_dir else None
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    interval = dict(mlm_loss=0.0, entity_loss=0.0, mlm_correct=0, mlm_total=0,
                    entity_correct=0, entity_total=0, batches=0)
    interval_start = time.monotonic()

    for step in range(start_step, cfg.total_steps):
        in_phase1 = step < cfg.phase1_steps
        optimizer.set_frozen(frozen if in_phase1 else set())
        lr = learning_rate_at(step, cfg)

        batch_sequences, plans = [], []
        for pos in range(step * cfg.batch_size, (step + 1) * cfg.batch_size):
            epoch, index = order.position(pos)
            seq = sequences[index]
            rng = plan_rng(cfg.seed, epoch, index)
            plans.append(
                make_masking_plan(
                    seq, rng, cfg.word_mask_prob, cfg.entity_mask_prob, vocab,
                    cfg.word_mask_split,
                )
            )
            batch_sequences.append(seq)
        batch = build_pretrain_batch(batch_sequences, plans, vocab, params.config.dtype)

        with Tape() as tape:
            result = pretrain_loss(
                batch, params, plans, entity_loss_enabled=cfg.entity_loss_enabled
            )
        tape.backward(result.loss)
        grads = {
            name: tape.gradient(t)
            for name, t in params.tensors.items()
            if name not in optimizer.frozen
        }
        optimizer.step(grads, lr)

        interval["mlm_loss"] += result.mlm_loss
        interval["entity_loss"] += result.entity_loss
        interval["mlm_correct"] += result.mlm_correct
        interval["mlm_total"] += result.mlm_total
        interval["entity_correct"] += result.entity_correct
        interval["entity_total"] += result.entity_total
        interval["batches"] += 1

        done = step + 1
        if done % cfg.log_interval == 0 or done == cfg.total_steps:
            wall_ms = (time.monotonic() - interval_start) * 1000.0
            record = _metric_record(done, lr, interval, wall_ms)
            metrics.append(record)
            if metrics_path:
                with metrics_path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, sort_keys=True) + "\n")
            interval = dict(mlm_loss=0.0, entity_loss=0.0, mlm_correct=0, mlm_total=0,
                            entity_correct=0, entity_total=0, batches=0)
            interval_start = time.monotonic()

        should_checkpoint = out_dir and (
            done == cfg.total_steps
            or (cfg.checkpoint_interval and done % cfg.checkpoint_interval == 0)
        )
        if should_checkpoint:
            meta = {
                "step": done,
                "optimizer": optimizer.state_meta(),
                "vocab_checksum": vocab.checksum(),
            }
            save_checkpoint(
                Path(out_dir) / f"step{done:06d}.ckpt", params, run_config, meta,
                optimizer.state_arrays(),
            )
            last = (Path(out_dir) / f"step{done:06d}.ckpt").read_bytes()
            write_atomic(Path(out_dir) / "last.ckpt", last)

    return metrics, optimizer


def evaluate_masked(
    sequences: list[TrainingSequence],
    params: ModelParams,
    vocab: Vocabulary,
    cfg: PretrainConfig,
    batch_size: int = 32,
) -> dict:
    """Deterministic held-out masking pass; reports accuracy and mean losses."""
    totals = dict(mlm_loss=0.0, entity_loss=0.0, mlm_correct=0, mlm_total=0,
                  entity_correct=0, entity_total=0, batches=0)
    for lo in range(0, len(sequences), batch_size):
        chunk = sequences[lo : lo + batch_size]
        plans = [
            make_masking_plan(
                seq, plan_rng(cfg.seed, EVAL_EPOCH, lo + i),
                cfg.word_mask_prob, cfg.entity_mask_prob, vocab, cfg.word_mask_split,
            )
            for i, seq in enumerate(chunk)
        ]
        batch = build_pretrain_batch(chunk, plans, vocab, params.config.dtype)
        result = pretrain_loss(batch, params, plans, entity_loss_enabled=cfg.entity_loss_enabled)
        totals["mlm_loss"] += result.mlm_loss
        totals["entity_loss"] += result.entity_loss
        totals["mlm_correct"] += result.mlm_correct
        totals["mlm_total"] += result.mlm_total
        totals["entity_correct"] += result.entity_correct
        totals["entity_total"] += result.entity_total
        totals["batches"] += 1
    return {
        "mlm_loss": totals["mlm_loss"] / max(totals["batches"], 1),
        "entity_loss": totals["entity_loss"] / max(totals["batches"], 1),
        "mlm_acc": totals["mlm_correct"] / max(totals["mlm_total"], 1),
        "entity_acc": totals["entity_correct"] / max(totals["entity_total"], 1),
    }

from .heads import add_pretrain_heads, entity_prediction_logits, mlm_logits
from .loop import (
    DEFAULT_FROZEN_GROUPS,
    EVAL_EPOCH,
    PretrainConfig,
    evaluate_masked,
    learning_rate_at,
    pretrain_loop,
)
from .loss import PretrainLossResult, pretrain_loss
from .masking import (
    EntityMask,
    MaskingPlan,
    WordMask,
    build_pretrain_batch,
    make_masking_plan,
    plan_rng,
)
from .optim import AdamW, lr_schedule

__all__ = [
    "AdamW",
    "DEFAULT_FROZEN_GROUPS",
    "EVAL_EPOCH",
    "EntityMask",
    "MaskingPlan",
    "PretrainConfig",
    "PretrainLossResult",
    "WordMask",
    "add_pretrain_heads",
    "build_pretrain_batch",
    "entity_prediction_logits",
    "evaluate_masked",
    "learning_rate_at",
    "lr_schedule",
    "make_masking_plan",
    "mlm_logits",
    "plan_rng",
    "pretrain_loop",
    "pretrain_loss",
]

from .data import VARIANTS, TaskDataset, TaskExample
from .decode import SpanPrediction, extractive_decode, ner_decode, ner_enumerate
from .finetune import (
    FinetuneConfig,
    FinetuneResult,
    evaluate_task,
    finetune,
    gold_answer_words,
    score_predictions,
    task_forward_and_loss,
)
from .heads import (
    RELATION_SPECIAL_PARAM,
    ClozeOutput,
    ExtractiveOutput,
    NerOutput,
    RelationOutput,
    TypingOutput,
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
from .metrics import (
    PRIMARY_METRIC,
    metrics,
    ner_metrics,
    qa_metrics,
    relation_metrics,
    token_f1,
    typing_metrics,
)
from .synth import (
    NER_LABELS,
    RELATION_LABELS,
    TYPING_LABELS,
    ner_rule,
    relation_rule,
    rule_prediction,
    synth_generate,
    typing_rule,
)

__all__ = [
    "ClozeOutput",
    "ExtractiveOutput",
    "FinetuneConfig",
    "FinetuneResult",
    "NER_LABELS",
    "NerOutput",
    "PRIMARY_METRIC",
    "RELATION_LABELS",
    "RELATION_SPECIAL_PARAM",
    "RelationOutput",
    "SpanPrediction",
    "TYPING_LABELS",
    "TaskDataset",
    "TaskExample",
    "TypingOutput",
    "VARIANTS",
    "cloze_forward",
    "cloze_loss",
    "evaluate_task",
    "extractive_decode",
    "extractive_forward",
    "extractive_loss",
    "finetune",
    "gold_answer_words",
    "install_task_head",
    "metrics",
    "ner_decode",
    "ner_enumerate",
    "ner_forward",
    "ner_loss",
    "ner_metrics",
    "ner_predictions",
    "ner_rule",
    "qa_metrics",
    "relation_forward",
    "relation_loss",
    "relation_metrics",
    "relation_rule",
    "rule_prediction",
    "score_predictions",
    "synth_generate",
    "task_forward_and_loss",
    "token_f1",
    "typing_forward",
    "typing_loss",
    "typing_metrics",
    "typing_rule",
]

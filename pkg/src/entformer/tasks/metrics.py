"""Evaluation metrics: micro precision/recall/F1 for set- and class-valued
tasks, span-level F1 for NER, and exact-match / token-overlap F1 for QA."""

from __future__ import annotations

from collections import Counter

from ..errors import ValidationError


def _prf(matched: int, predicted: int, gold: int) -> dict:
    precision = matched / predicted if predicted else 0.0
    recall = matched / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def typing_metrics(predictions: list[list[str]], golds: list[list[str]]) -> dict:
    matched = predicted = gold_total = 0
    for pred, gold in zip(predictions, golds, strict=True):
        pred_set, gold_set = set(pred), set(gold)
        matched += len(pred_set & gold_set)
        predicted += len(pred_set)
        gold_total += len(gold_set)
    return _prf(matched, predicted, gold_total)


def relation_metrics(
    predictions: list[str], golds: list[str], negative_label: str = "no_relation"
) -> dict:
    """Micro P/R/F1 with the negative class excluded from both sides."""
    matched = predicted = gold_total = 0
    for pred, gold in zip(predictions, golds, strict=True):
        if pred != negative_label:
            predicted += 1
            if pred == gold:
                matched += 1
        if gold != negative_label:
            gold_total += 1
    return _prf(matched, predicted, gold_total)


def ner_metrics(
    predictions: list[list[tuple[int, int, str]]],
    golds: list[list[tuple[int, int, str]]],
) -> dict:
    matched = predicted = gold_total = 0
    for pred, gold in zip(predictions, golds, strict=True):
        pred_set = {tuple(span) for span in pred}
        gold_set = {tuple(span) for span in gold}
        matched += len(pred_set & gold_set)
        predicted += len(pred_set)
        gold_total += len(gold_set)
    return _prf(matched, predicted, gold_total)


def token_f1(predicted: list[str], gold: list[str]) -> float:
    pred_counts = Counter(w.lower() for w in predicted)
    gold_counts = Counter(w.lower() for w in gold)
    overlap = sum((pred_counts & gold_counts).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(pred_counts.values())
    recall = overlap / sum(gold_counts.values())
    return 2 * precision * recall / (precision + recall)


def qa_metrics(predictions: list[list[str]], golds: list[list[str]]) -> dict:
    """Mean exact match and token-level F1 over answer word lists."""
    if not predictions:
        raise ValidationError("qa metrics need at least one example")
    em = 0.0
    f1 = 0.0
    for pred, gold in zip(predictions, golds, strict=True):
        em += float([w.lower() for w in pred] == [w.lower() for w in gold])
        f1 += token_f1(pred, gold)
    n = len(predictions)
    return {"em": em / n, "f1": f1 / n}


def metrics(variant: str, predictions, golds) -> dict:
    if variant == "typing":
        return typing_metrics(predictions, golds)
    if variant == "relation":
        return relation_metrics(predictions, golds)
    if variant == "ner":
        return ner_metrics(predictions, golds)
    if variant in ("cloze", "extractive"):
        return qa_metrics(predictions, golds)
    raise ValidationError(f"unknown task variant {variant!r}")


PRIMARY_METRIC = {
    "typing": "f1",
    "relation": "f1",
    "ner": "f1",
    "cloze": "em",
    "extractive": "em",
}

"""Forward constructions and losses for the five downstream tasks.

Every task runs the shared encoder over a purpose-built word/entity layout
and puts a linear classifier on the relevant output rows:

- typing: one mask entity over the target mention -> per-type logits
- relation: two task-specific entities over head/tail -> class logits on
  their concatenation
- span NER: one mask entity per candidate span -> (types + non-entity)
  logits on first-word/last-word/entity rows
- cloze: a mask entity for the missing slot and per passage span ->
  relevance score per span against the missing-entity row
- extractive: annotated real entities as inputs, start/end classifiers on
  every word row
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus.vocab import Vocabulary
from ..corpus.windows import TrainingSequence
from ..errors import ValidationError
from ..model.batch import build_batch
from ..model.config import ModelConfig
from ..model.encoder import encode_batch
from ..model.params import ModelParams, _normal, _zeros
from ..numerics import DTYPES, Tensor, ops
from .data import TaskExample
from .decode import ner_enumerate

RELATION_SPECIAL_PARAM = "task.relation_special"  # rows: 0 = head marker, 1 = tail marker


def install_task_head(
    params: ModelParams,
    variant: str,
    labels: list[str],
    rng: np.random.Generator,
    use_entity_inputs: bool = True,
) -> None:
    """Add the linear classifier (and any task entities) for one task."""
    config = params.config
    dt = DTYPES[config.dtype]
    d = config.hidden_size
    if variant == "typing":
        params.add("task.typing_w", _normal(rng, (d, len(labels)), dt))
        params.add("task.typing_b", _zeros((len(labels),), dt))
    elif variant == "relation":
        params.add("task.relation_w", _normal(rng, (2 * d, len(labels)), dt))
        params.add("task.relation_b", _zeros((len(labels),), dt))
        mask_row = params["embed.entity"].data[0]  # the mask entity's token embedding
        params.add(RELATION_SPECIAL_PARAM, Tensor(np.stack([mask_row, mask_row]).astype(dt)))
    elif variant == "ner":
        width = (3 if use_entity_inputs else 2) * d
        params.add("task.ner_w", _normal(rng, (width, len(labels) + 1), dt))
        params.add("task.ner_b", _zeros((len(labels) + 1,), dt))
    elif variant == "cloze":
        params.add("task.cloze_w", _normal(rng, (2 * d, 1), dt))
        params.add("task.cloze_b", _zeros((1,), dt))
    elif variant == "extractive":
        params.add("task.qa_start_w", _normal(rng, (d, 1), dt))
        params.add("task.qa_start_b", _zeros((1,), dt))
        params.add("task.qa_end_w", _normal(rng, (d, 1), dt))
        params.add("task.qa_end_b", _zeros((1,), dt))
    else:
        raise ValidationError(f"unknown task variant {variant!r}")


def _sentence_sequence(
    words: list[str],
    vocab: Vocabulary,
    entity_ids: list[int],
    spans: list[tuple[int, int]],
) -> TrainingSequence:
    """[CLS] words [SEP] with entities over content spans (end exclusive)."""
    seq = TrainingSequence(
        words=["[CLS]"] + list(words) + ["[SEP]"],
        word_ids=[vocab.cls_id] + [vocab.word_id(w) for w in words] + [vocab.sep_id],
        entity_ids=list(entity_ids),
        entity_positions=[list(range(s + 1, e + 1)) for s, e in spans],
    )
    seq.validate()
    return seq


def _qa_words(example: TaskExample) -> tuple[list[str], int]:
    """[CLS] q [SEP] [SEP] p [SEP]; returns (words, passage offset)."""
    words = ["[CLS]"] + list(example.question) + ["[SEP]", "[SEP]"] + list(example.passage) + ["[SEP]"]
    return words, 3 + len(example.question)


def _qa_sequence(
    example: TaskExample,
    vocab: Vocabulary,
    entity_ids: list[int],
    positions: list[list[int]],
) -> tuple[TrainingSequence, int]:
    words, offset = _qa_words(example)
    ids = [vocab.cls_id] + [vocab.word_id(w) for w in example.question] + [vocab.sep_id, vocab.sep_id]
    ids += [vocab.word_id(w) for w in example.passage] + [vocab.sep_id]
    seq = TrainingSequence(
        words=words, word_ids=ids, entity_ids=entity_ids, entity_positions=positions
    )
    seq.validate()
    return seq, offset


def _encode_one(seq, params, config, extra_entity_param=None):
    batch = build_batch(
        [seq], pad_word_id=0, dtype=config.dtype, extra_entity_param=extra_entity_param
    )
    out = encode_batch(batch, params, config)
    h_words = ops.reshape(out.h_words, out.h_words.shape[1:])
    h_entities = None
    if out.h_entities is not None:
        h_entities = ops.reshape(out.h_entities, out.h_entities.shape[1:])
    return h_words, h_entities


@dataclass
class TypingOutput:
    logits: Tensor  # (num_types,)

    def predicted_types(self, labels: list[str]) -> list[str]:
        return [labels[i] for i in np.nonzero(self.logits.data > 0.0)[0]]


def typing_forward(
    example: TaskExample, params: ModelParams, vocab: Vocabulary,
    config: ModelConfig | None = None,
) -> TypingOutput:
    config = config or params.config
    if example.target_span is None:
        raise ValidationError("typing example has no target entity")
    seq = _sentence_sequence(
        example.words, vocab, [vocab.mask_entity_id], [tuple(example.target_span)]
    )
    _, h_entities = _encode_one(seq, params, config)
    if h_entities is None or h_entities.shape[0] != 1:
        raise ValidationError("typing forward expects exactly one target entity")
    target = ops.reshape(h_entities, (1, config.hidden_size))
    logits = ops.add(ops.matmul(target, params["task.typing_w"]), params["task.typing_b"])
    return TypingOutput(logits=ops.reshape(logits, (logits.shape[1],)))


def typing_loss(output: TypingOutput, gold_types: list[str], labels: list[str]) -> Tensor:
    targets = np.array([1.0 if label in gold_types else 0.0 for label in labels])
    return ops.mean_all(ops.bce_with_logits(output.logits, targets))


@dataclass
class RelationOutput:
    logits: Tensor  # (num_relations,)

    def predicted_relation(self, labels: list[str]) -> str:
        return labels[int(np.argmax(self.logits.data))]


def relation_forward(
    example: TaskExample, params: ModelParams, vocab: Vocabulary,
    config: ModelConfig | None = None,
) -> RelationOutput:
    config = config or params.config
    if example.head_span is None or example.tail_span is None:
        raise ValidationError("relation example needs both head and tail spans")
    head_id = config.vocab_entities      # rows appended after the entity table
    tail_id = config.vocab_entities + 1
    seq = _sentence_sequence(
        example.words, vocab, [head_id, tail_id],
        [tuple(example.head_span), tuple(example.tail_span)],
    )
    _, h_entities = _encode_one(seq, params, config, extra_entity_param=RELATION_SPECIAL_PARAM)
    if h_entities is None or h_entities.shape[0] != 2:
        raise ValidationError("relation forward expects exactly the head and tail entities")
    pair = ops.reshape(h_entities, (1, 2 * config.hidden_size))
    logits = ops.add(ops.matmul(pair, params["task.relation_w"]), params["task.relation_b"])
    return RelationOutput(logits=ops.reshape(logits, (logits.shape[1],)))


def relation_loss(output: RelationOutput, gold_relation: str, labels: list[str]) -> Tensor:
    gold = labels.index(gold_relation)
    log_probs = ops.log_softmax(output.logits, axis=-1)
    return ops.scale(ops.narrow(log_probs, 0, gold, gold + 1), -1.0)


@dataclass
class NerOutput:
    candidates: list[tuple[int, int]]
    logits: Tensor  # (num_candidates, num_types + 1); last column is non-entity


def ner_forward(
    example: TaskExample, params: ModelParams, vocab: Vocabulary,
    config: ModelConfig | None = None,
    max_span_len: int = 16,
    chunk_size: int = 128,
) -> NerOutput:
    """Score every candidate span.

    Candidates beyond ``chunk_size`` run in extra encoder passes that share
    the word sequence (word rows are recomputed per chunk).
    """
    config = config or params.config
    n = len(example.words)
    candidates = ner_enumerate(n, max_span_len)
    d = config.hidden_size

    if not config.use_entity_inputs:
        seq = _sentence_sequence(example.words, vocab, [], [])
        h_words, _ = _encode_one(seq, params, config)
        firsts = ops.gather_rows(h_words, np.array([s + 1 for s, _ in candidates]))
        lasts = ops.gather_rows(h_words, np.array([e for _, e in candidates]))
        features = ops.concat([firsts, lasts], axis=1)
        logits = ops.add(ops.matmul(features, params["task.ner_w"]), params["task.ner_b"])
        return NerOutput(candidates=candidates, logits=logits)

    chunks = []
    for lo in range(0, len(candidates), chunk_size):
        chunk = candidates[lo : lo + chunk_size]
        seq = _sentence_sequence(
            example.words, vocab, [vocab.mask_entity_id] * len(chunk), chunk
        )
        h_words, h_entities = _encode_one(seq, params, config)
        if h_entities is None or h_entities.shape[0] != len(chunk):
            raise ValidationError(
                f"candidate count {len(chunk)} does not match entity count in the encoder input"
            )
        firsts = ops.gather_rows(h_words, np.array([s + 1 for s, _ in chunk]))
        lasts = ops.gather_rows(h_words, np.array([e for _, e in chunk]))
        features = ops.concat([firsts, lasts, h_entities], axis=1)
        chunks.append(ops.add(ops.matmul(features, params["task.ner_w"]), params["task.ner_b"]))
    logits = chunks[0] if len(chunks) == 1 else ops.concat(chunks, axis=0)
    return NerOutput(candidates=candidates, logits=logits)


def ner_loss(output: NerOutput, gold_spans, labels: list[str]) -> Tensor:
    gold_by_span = {(s, e): labels.index(t) for s, e, t in gold_spans}
    non_entity = len(labels)
    golds = np.array([gold_by_span.get(span, non_entity) for span in output.candidates])
    log_probs = ops.log_softmax(output.logits, axis=-1)
    return ops.scale(ops.mean_all(ops.pick(log_probs, golds)), -1.0)


def ner_predictions(output: NerOutput, labels: list[str]):
    """Per-span predicted type (or None) and its logit, ready for decoding."""
    from .decode import SpanPrediction

    data = output.logits.data
    non_entity = len(labels)
    picks = np.argmax(data, axis=-1)
    return [
        SpanPrediction(
            start=s,
            end=e,
            label=None if picks[i] == non_entity else labels[int(picks[i])],
            logit=float(data[i, picks[i]]),
        )
        for i, (s, e) in enumerate(output.candidates)
    ]


@dataclass
class ClozeOutput:
    scores: Tensor  # (num_passage_spans,)

    def predicted_index(self) -> int:
        data = self.scores.data
        return int(np.flatnonzero(data == data.max())[0])  # lowest index wins ties


def cloze_forward(
    example: TaskExample, params: ModelParams, vocab: Vocabulary,
    config: ModelConfig | None = None,
) -> ClozeOutput:
    config = config or params.config
    if not example.passage_spans:
        raise ValidationError("cloze example has no passage entity spans")
    offset = 3 + len(example.question)
    positions = [list(range(example.placeholder_span[0] + 1, example.placeholder_span[1] + 1))]
    positions += [list(range(s + offset, e + offset)) for s, e in example.passage_spans]
    entity_ids = [vocab.mask_entity_id] * (1 + len(example.passage_spans))
    seq, _ = _qa_sequence(example, vocab, entity_ids, positions)
    _, h_entities = _encode_one(seq, params, config)
    d = config.hidden_size
    count = len(example.passage_spans)
    missing = ops.narrow(h_entities, 0, 0, 1)
    spans = ops.narrow(h_entities, 0, 1, count + 1)
    tiled = ops.matmul(np.ones((count, 1), dtype=missing.data.dtype), missing)
    features = ops.concat([tiled, spans], axis=1)
    scores = ops.add(ops.matmul(features, params["task.cloze_w"]), params["task.cloze_b"])
    return ClozeOutput(scores=ops.reshape(scores, (count,)))


def cloze_loss(output: ClozeOutput, answer_indices: list[int]) -> Tensor:
    count = output.scores.shape[0]
    targets = np.zeros(count)
    targets[list(answer_indices)] = 1.0
    return ops.mean_all(ops.bce_with_logits(output.scores, targets))


@dataclass
class ExtractiveOutput:
    start_logits: Tensor   # (m,) over the full word sequence
    end_logits: Tensor
    passage_offset: int
    passage_len: int


def extractive_forward(
    example: TaskExample, params: ModelParams, vocab: Vocabulary,
    config: ModelConfig | None = None,
) -> ExtractiveOutput:
    config = config or params.config
    offset = 3 + len(example.question)
    entity_ids: list[int] = []
    positions: list[list[int]] = []
    if config.use_entity_inputs:
        for title, s, e in example.question_entities or []:
            entity_ids.append(vocab.entity_id(title))
            positions.append(list(range(s + 1, e + 1)))
        for title, s, e in example.passage_entities or []:
            entity_ids.append(vocab.entity_id(title))
            positions.append(list(range(s + offset, e + offset)))
    seq, _ = _qa_sequence(example, vocab, entity_ids, positions)
    h_words, _ = _encode_one(seq, params, config)
    start = ops.add(ops.matmul(h_words, params["task.qa_start_w"]), params["task.qa_start_b"])
    end = ops.add(ops.matmul(h_words, params["task.qa_end_w"]), params["task.qa_end_b"])
    m = h_words.shape[0]
    return ExtractiveOutput(
        start_logits=ops.reshape(start, (m,)),
        end_logits=ops.reshape(end, (m,)),
        passage_offset=offset,
        passage_len=len(example.passage),
    )


def extractive_loss(output: ExtractiveOutput, answer_span: tuple[int, int]) -> Tensor:
    start, end = answer_span
    lo, hi = output.passage_offset, output.passage_offset + output.passage_len
    gold_start = start + output.passage_offset
    gold_end = end - 1 + output.passage_offset   # inclusive last-word position
    if not (lo <= gold_start <= gold_end < hi):
        raise ValidationError(f"gold span {answer_span} falls outside the passage region")
    nll_start = ops.narrow(ops.log_softmax(output.start_logits, axis=-1), 0, gold_start, gold_start + 1)
    nll_end = ops.narrow(ops.log_softmax(output.end_logits, axis=-1), 0, gold_end, gold_end + 1)
    return ops.scale(ops.add(nll_start, nll_end), -1.0)

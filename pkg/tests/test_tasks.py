import numpy as np
import pytest

import oracles
from entformer.corpus import SynthWorld, build_vocab, generate_corpus, window
from entformer.errors import ValidationError
from entformer.model import ModelConfig, init_params
from entformer.numerics import Tensor
from entformer.tasks import (
    FinetuneConfig,
    SpanPrediction,
    TaskDataset,
    TaskExample,
    cloze_forward,
    cloze_loss,
    evaluate_task,
    extractive_decode,
    extractive_forward,
    extractive_loss,
    finetune,
    install_task_head,
    metrics,
    ner_decode,
    ner_enumerate,
    ner_forward,
    ner_loss,
    ner_predictions,
    relation_forward,
    relation_loss,
    rule_prediction,
    score_predictions,
    synth_generate,
    typing_forward,
    typing_loss,
)
from entformer.tasks.heads import ExtractiveOutput, ClozeOutput
from entformer.tasks.synth import RELATION_LABELS, TYPING_LABELS, NER_LABELS


@pytest.fixture(scope="module")
def world_setup():
    world = SynthWorld(num_entities=12)
    docs = generate_corpus(30, seed=1, world=world)
    vocab = build_vocab(docs, max_words=80, max_entities=16)
    return world, vocab


def task_params(vocab, variants=(), seed=0, use_entity_inputs=True, dtype="f64"):
    config = ModelConfig(
        hidden_size=16, num_layers=1, num_heads=2, head_dim=8, entity_emb_size=8,
        vocab_words=vocab.num_words, vocab_entities=vocab.num_entities,
        max_positions=128, dtype=dtype, attention_mode="original",
        use_entity_inputs=use_entity_inputs,
    ).validate()
    params = init_params(config, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    labels = {"typing": TYPING_LABELS, "relation": RELATION_LABELS, "ner": NER_LABELS,
              "cloze": [], "extractive": []}
    for variant in variants:
        install_task_head(params, variant, labels[variant], rng,
                          use_entity_inputs=use_entity_inputs)
    return params


def example_of(world, variant, index=0, seed=3):
    return synth_generate(variant, seed, index + 1, world).examples[index]


class TestTyping:
    def test_zero_classifier_gives_ln2(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["typing"])
        params.tensors["task.typing_w"].data[:] = 0.0
        example = example_of(world, "typing")
        out = typing_forward(example, params, vocab)
        loss = typing_loss(out, example.gold_types, TYPING_LABELS)
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-12)
        assert out.predicted_types(TYPING_LABELS) == []  # logit 0 is not > 0

    def test_hand_arithmetic_head(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["typing"])
        rng = np.random.default_rng(9)
        w = rng.normal(size=(16, len(TYPING_LABELS)))
        b = rng.normal(size=len(TYPING_LABELS))
        params.tensors["task.typing_w"].data[:] = w
        params.tensors["task.typing_b"].data[:] = b
        example = example_of(world, "typing")
        seq_words = ["[CLS]"] + example.words + ["[SEP]"]
        # independent recomputation of the hidden state via the naive oracle
        span = example.target_span
        h_w, h_e = oracles.naive_encode(
            [vocab.cls_id] + [vocab.word_id(x) for x in example.words] + [vocab.sep_id],
            [vocab.mask_entity_id],
            [list(range(span[0] + 1, span[1] + 1))],
            oracles.np_params(params),
            params.config,
        )
        expected = h_e[0] @ w + b
        out = typing_forward(example, params, vocab)
        np.testing.assert_allclose(out.logits.data, expected, atol=1e-10)
        assert len(seq_words) == h_w.shape[0]

    def test_missing_target_rejected(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["typing"])
        example = example_of(world, "typing")
        example.target_span = None
        with pytest.raises(ValidationError):
            typing_forward(example, params, vocab)


class TestRelation:
    def test_zero_classifier_uniform(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["relation"])
        params.tensors["task.relation_w"].data[:] = 0.0
        example = example_of(world, "relation")
        out = relation_forward(example, params, vocab)
        loss = relation_loss(out, example.gold_relation, RELATION_LABELS)
        assert loss.item() == pytest.approx(np.log(len(RELATION_LABELS)), rel=1e-12)

    def test_head_tail_order_matters(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["relation"])
        example = example_of(world, "relation")
        swapped = TaskExample(
            variant="relation", example_id="swap", words=example.words,
            head_span=example.tail_span, tail_span=example.head_span,
            gold_relation=example.gold_relation,
        )
        a = relation_forward(example, params, vocab)
        b = relation_forward(swapped, params, vocab)
        assert np.abs(a.logits.data - b.logits.data).max() > 1e-8

    def test_special_entities_start_as_mask_copy(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["relation"])
        mask_row = params["embed.entity"].data[vocab.mask_entity_id]
        special = params["task.relation_special"].data
        np.testing.assert_array_equal(special[0], mask_row)
        np.testing.assert_array_equal(special[1], mask_row)

    def test_missing_tail_rejected(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["relation"])
        example = example_of(world, "relation")
        example.tail_span = None
        with pytest.raises(ValidationError):
            relation_forward(example, params, vocab)


class TestNerEnumerate:
    def test_one_word(self):
        assert ner_enumerate(1, 16) == [(0, 1)]

    def test_five_words_fifteen_spans(self):
        assert len(ner_enumerate(5, 16)) == 15

    def test_twenty_words_matches_brute_force(self):
        # independent oracle: enumerate every (s, e) and filter by length
        brute = [
            (s, e)
            for s in range(20)
            for e in range(s + 1, 21)
            if e - s <= 16
        ]
        got = ner_enumerate(20, 16)
        assert got == sorted(brute)
        formula = sum(20 - l + 1 for l in range(1, 17))
        assert len(got) == formula == 200

    def test_deterministic_order(self):
        spans = ner_enumerate(6, 3)
        assert spans == sorted(spans)


class TestNerForward:
    def test_zero_classifier_uniform(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["ner"])
        params.tensors["task.ner_w"].data[:] = 0.0
        example = example_of(world, "ner")
        out = ner_forward(example, params, vocab, max_span_len=4)
        loss = ner_loss(out, example.gold_spans, NER_LABELS)
        assert loss.item() == pytest.approx(np.log(len(NER_LABELS) + 1), rel=1e-12)

    def test_word_only_mode_uses_2d_features(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["ner"], use_entity_inputs=False)
        assert params["task.ner_w"].shape[0] == 2 * 16
        example = example_of(world, "ner")
        out = ner_forward(example, params, vocab, max_span_len=4)
        assert out.logits.shape == (len(out.candidates), len(NER_LABELS) + 1)

    def test_chunked_pass_covers_all_candidates(self, world_setup):
        # candidates beyond chunk_size run in separate passes sharing the word
        # sequence; mask entities then only see their own chunk, so logits are
        # chunking-dependent by design -- but coverage, shapes, and determinism
        # must hold
        world, vocab = world_setup
        params = task_params(vocab, ["ner"])
        example = example_of(world, "ner")
        whole = ner_forward(example, params, vocab, max_span_len=4, chunk_size=1000)
        chunked = ner_forward(example, params, vocab, max_span_len=4, chunk_size=7)
        assert whole.candidates == chunked.candidates == ner_enumerate(len(example.words), 4)
        assert chunked.logits.shape == whole.logits.shape
        assert np.all(np.isfinite(chunked.logits.data))
        again = ner_forward(example, params, vocab, max_span_len=4, chunk_size=7)
        np.testing.assert_array_equal(chunked.logits.data, again.logits.data)


class TestNerDecode:
    def test_all_non_entity_empty(self):
        preds = [SpanPrediction(0, 2, None, 5.0), SpanPrediction(1, 3, None, 4.0)]
        assert ner_decode(preds) == []

    def test_higher_logit_wins_overlap(self):
        preds = [
            SpanPrediction(0, 3, "a", 2.0),
            SpanPrediction(2, 4, "b", 3.0),
        ]
        assert ner_decode(preds) == [(2, 4, "b")]

    def test_matches_independent_oracle_1000(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(3, 12))
            preds = []
            for s, e in ner_enumerate(n, 4):
                if rng.random() < 0.4:
                    label = f"t{int(rng.integers(3))}"
                    preds.append(SpanPrediction(s, e, label, float(rng.normal())))
                else:
                    preds.append(SpanPrediction(s, e, None, float(rng.normal())))
            got = ner_decode(preds)
            want = oracles.naive_greedy_span_decode(
                [(p.start, p.end, p.label, p.logit) for p in preds if p.label is not None]
            )
            assert got == want

    def test_output_non_overlapping_and_rejections_justified(self):
        rng = np.random.default_rng(1)
        preds = [
            SpanPrediction(s, e, f"t{int(rng.integers(2))}", float(rng.normal()))
            for s, e in ner_enumerate(8, 5)
        ]
        chosen = ner_decode(preds)
        spans = sorted((s, e) for s, e, _ in chosen)
        assert all(e1 <= s2 for (_, e1), (s2, _) in zip(spans, spans[1:]))
        accepted_logits = {
            (s, e): next(p.logit for p in preds if (p.start, p.end) == (s, e))
            for s, e, _ in chosen
        }
        for p in preds:
            if p.label is None or (p.start, p.end, p.label) in chosen:
                continue
            blockers = [
                (s, e) for (s, e) in accepted_logits
                if p.start < e and s < p.end
            ]
            assert blockers
            assert any(accepted_logits[b] >= p.logit for b in blockers)


class TestCloze:
    def test_single_entity_always_predicted(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["cloze"])
        example = example_of(world, "cloze")
        single = TaskExample(
            variant="cloze", example_id="one", question=example.question,
            passage=example.passage, placeholder_span=example.placeholder_span,
            passage_spans=example.passage_spans[:1], answer_indices=[0],
        )
        out = cloze_forward(single, params, vocab)
        assert out.predicted_index() == 0

    def test_multi_span_answer_all_positive(self, world_setup):
        world, vocab = world_setup
        for index in range(40):
            example = example_of(world, "cloze", index=index)
            if len(example.answer_indices) > 1:
                spans = [example.passage_spans[i] for i in example.answer_indices]
                surfaces = {tuple(example.passage[s:e]) for s, e in spans}
                assert len(surfaces) == 1  # same answer string in both spans
                break
        else:
            pytest.fail("no multi-span cloze example generated in 40 draws")

    def test_hand_scoring(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["cloze"])
        rng = np.random.default_rng(11)
        w = rng.normal(size=(32, 1))
        b = rng.normal(size=1)
        params.tensors["task.cloze_w"].data[:] = w
        params.tensors["task.cloze_b"].data[:] = b
        example = example_of(world, "cloze")
        offset = 3 + len(example.question)
        positions = [list(range(example.placeholder_span[0] + 1, example.placeholder_span[1] + 1))]
        positions += [list(range(s + offset, e + offset)) for s, e in example.passage_spans]
        word_ids = (
            [vocab.cls_id] + [vocab.word_id(x) for x in example.question]
            + [vocab.sep_id, vocab.sep_id]
            + [vocab.word_id(x) for x in example.passage] + [vocab.sep_id]
        )
        _, h_e = oracles.naive_encode(
            word_ids, [vocab.mask_entity_id] * len(positions), positions,
            oracles.np_params(params), params.config,
        )
        expected = np.array([
            np.concatenate([h_e[0], h_e[1 + i]]) @ w[:, 0] + b[0]
            for i in range(len(example.passage_spans))
        ])
        out = cloze_forward(example, params, vocab)
        np.testing.assert_allclose(out.scores.data, expected, atol=1e-10)

    def test_loss_permutation_invariant(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["cloze"])
        example = example_of(world, "cloze")
        out = cloze_forward(example, params, vocab)
        base = cloze_loss(out, example.answer_indices).item()
        perm = list(np.random.default_rng(2).permutation(len(example.passage_spans)))
        shuffled = TaskExample(
            variant="cloze", example_id="perm", question=example.question,
            passage=example.passage, placeholder_span=example.placeholder_span,
            passage_spans=[example.passage_spans[i] for i in perm],
            answer_indices=[perm.index(i) for i in example.answer_indices],
        )
        out2 = cloze_forward(shuffled, params, vocab)
        assert cloze_loss(out2, shuffled.answer_indices).item() == pytest.approx(base, abs=1e-10)

    def test_perfect_scores_zero_loss(self):
        scores = Tensor(np.array([1000.0, -1000.0, -1000.0]))
        assert cloze_loss(ClozeOutput(scores=scores), [0]).item() < 1e-6

    def test_tie_breaks_to_lowest_index(self):
        scores = Tensor(np.array([1.0, 3.0, 3.0]))
        assert ClozeOutput(scores=scores).predicted_index() == 1

    def test_no_passage_entities_rejected(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["cloze"])
        example = example_of(world, "cloze")
        example.passage_spans = []
        with pytest.raises(ValidationError):
            cloze_forward(example, params, vocab)


class TestExtractive:
    def test_zero_classifiers_uniform(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["extractive"])
        params.tensors["task.qa_start_w"].data[:] = 0.0
        params.tensors["task.qa_end_w"].data[:] = 0.0
        example = example_of(world, "extractive")
        out = extractive_forward(example, params, vocab)
        m = out.start_logits.shape[0]
        loss = extractive_loss(out, example.answer_span)
        assert loss.item() == pytest.approx(2 * np.log(m), rel=1e-12)

    def test_perfect_margin_zero_loss(self):
        start = np.full(12, -1000.0)
        end = np.full(12, -1000.0)
        start[5] = 1000.0
        end[6] = 1000.0
        out = ExtractiveOutput(
            start_logits=Tensor(start), end_logits=Tensor(end),
            passage_offset=4, passage_len=7,
        )
        # gold passage span [1, 3) -> sequence start 5, inclusive end 6
        assert extractive_loss(out, (1, 3)).item() < 1e-6

    def test_decode_matches_exhaustive_oracle_500(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            m = int(rng.integers(6, 30))
            lo = int(rng.integers(1, m - 3))
            hi = int(rng.integers(lo + 2, m + 1))
            max_len = int(rng.integers(1, 8))
            start = rng.normal(size=m)
            end = rng.normal(size=m)
            got = extractive_decode(start, end, lo, hi, max_len)
            want = oracles.exhaustive_best_span(start, end, lo, hi, max_len)
            assert got == (want[0], want[1] + 1)

    def test_gold_outside_passage_rejected(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["extractive"])
        example = example_of(world, "extractive")
        out = extractive_forward(example, params, vocab)
        with pytest.raises(ValidationError):
            extractive_loss(out, (len(example.passage), len(example.passage) + 2))

    def test_real_entity_annotations_used(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["extractive"])
        example = example_of(world, "extractive")
        titles = [t for t, _, _ in example.passage_entities]
        assert all(vocab.entity_id(t) != vocab.unk_entity_id for t in titles)


class TestMetrics:
    def test_perfect_scores_one(self):
        assert metrics("typing", [["a"]], [["a"]])["f1"] == 1.0
        assert metrics("relation", ["r1"], ["r1"])["f1"] == 1.0
        assert metrics("ner", [[(0, 2, "x")]], [[(0, 2, "x")]])["f1"] == 1.0
        assert metrics("cloze", [["w"]], [["w"]])["em"] == 1.0

    def test_typing_partial(self):
        scores = metrics("typing", [["A"]], [["A", "B"]])
        assert scores["precision"] == 1.0
        assert scores["recall"] == 0.5
        assert scores["f1"] == pytest.approx(2 / 3)

    def test_token_f1_example(self):
        scores = metrics("extractive", [["New", "York"]], [["New", "York", "City"]])
        assert scores["em"] == 0.0
        assert scores["f1"] == pytest.approx(0.8)

    def test_relation_excludes_negative_class(self):
        preds = ["no_relation", "rel1", "rel2"]
        golds = ["no_relation", "rel1", "rel1"]
        scores = metrics("relation", preds, golds)
        assert scores["precision"] == 0.5  # one of two positive predictions correct
        assert scores["recall"] == 0.5
        assert scores["f1"] == 0.5

    def test_permutation_invariance(self):
        preds = [["a"], ["b"], ["a", "b"]]
        golds = [["a"], ["a"], ["b"]]
        base = metrics("typing", preds, golds)
        perm = metrics("typing", preds[::-1], golds[::-1])
        assert base == perm


class TestSynth:
    def test_size_zero_empty(self, world_setup):
        world, _ = world_setup
        assert synth_generate("typing", 0, 0, world).examples == []

    def test_reproducible_from_seed_index(self, world_setup):
        world, _ = world_setup
        a = synth_generate("relation", 5, 4, world)
        b = synth_generate("relation", 5, 4, world)
        assert [e.to_json() for e in a.examples] == [e.to_json() for e in b.examples]

    @pytest.mark.parametrize("variant", ["typing", "relation", "ner", "cloze", "extractive"])
    def test_rule_as_oracle_scores_one(self, world_setup, variant):
        world, _ = world_setup
        dataset = synth_generate(variant, 7, 25, world)
        preds, golds = [], []
        for example in dataset.examples:
            rule = rule_prediction(example, world)
            if variant == "typing":
                preds.append(rule)
                golds.append(example.gold_types)
            elif variant == "relation":
                preds.append(rule)
                golds.append(example.gold_relation)
            elif variant == "ner":
                preds.append(rule)
                golds.append(sorted(example.gold_spans))
            elif variant == "cloze":
                span = example.passage_spans[rule]
                preds.append(example.passage[span[0] : span[1]])
                gold_span = example.passage_spans[example.answer_indices[0]]
                golds.append(example.passage[gold_span[0] : gold_span[1]])
            else:
                preds.append(example.passage[rule[0] : rule[1]])
                golds.append(example.passage[example.answer_span[0] : example.answer_span[1]])
        scores = metrics(variant, preds, golds)
        key = "em" if variant in ("cloze", "extractive") else "f1"
        assert scores[key] == 1.0

    @pytest.mark.parametrize("variant", ["typing", "relation", "ner", "cloze", "extractive"])
    def test_words_stay_in_pretraining_vocab(self, world_setup, variant):
        world, vocab = world_setup
        dataset = synth_generate(variant, 9, 10, world)
        for example in dataset.examples:
            words = example.words if example.words else example.question + example.passage
            assert all(vocab.word_id(w) != vocab.unk_word_id for w in words)

    def test_dataset_file_round_trip(self, world_setup, tmp_path):
        world, _ = world_setup
        dataset = synth_generate("cloze", 3, 5, world)
        path = tmp_path / "cloze.jsonl"
        dataset.save(path)
        loaded = TaskDataset.load(path)
        assert loaded.variant == "cloze"
        assert [e.to_json() for e in loaded.examples] == [e.to_json() for e in dataset.examples]


class TestFinetuneMachinery:
    def test_short_finetune_improves_typing(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, dtype="f32")
        train = synth_generate("typing", 1, 40, world)
        dev = synth_generate("typing", 2, 12, world)
        cfg = FinetuneConfig(task="typing", steps=30, batch_size=4, lr=1e-3,
                             eval_interval=10, seed=0)
        result = finetune(params, train, dev, vocab, cfg)
        assert result.history
        assert result.best_metric >= result.history[0]["dev_f1"] - 1e-9

    def test_appendix_grid_expressible(self):
        for lr in (1e-5, 2e-5, 3e-5):
            for batch in (4, 8, 16, 32, 64):
                for epochs in (2, 3, 5):
                    cfg = FinetuneConfig(task="ner", lr=lr, batch_size=batch,
                                         epochs=epochs).validate()
                    assert cfg.total_steps(100) == int(np.ceil(epochs * 100 / batch))

    def test_eval_scores_recomputable_from_predictions(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["relation"], dtype="f32")
        dev = synth_generate("relation", 4, 10, world)
        cfg = FinetuneConfig(task="relation")
        scores, predictions = evaluate_task(params, dev, vocab, cfg)
        assert score_predictions(dev, predictions) == scores

    def test_eval_without_gold_gives_predictions_only(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["typing"], dtype="f32")
        dataset = synth_generate("typing", 6, 4, world)
        for example in dataset.examples:
            example.gold_types = None
        cfg = FinetuneConfig(task="typing")
        scores, predictions = evaluate_task(params, dataset, vocab, cfg)
        assert scores is None
        assert len(predictions) == 4

    def test_empty_dataset_eval_rejected(self, world_setup):
        world, vocab = world_setup
        params = task_params(vocab, ["typing"], dtype="f32")
        empty = TaskDataset(variant="typing", labels=TYPING_LABELS, examples=[])
        with pytest.raises(ValidationError):
            evaluate_task(params, empty, vocab, FinetuneConfig(task="typing"))

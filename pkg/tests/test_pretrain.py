import numpy as np
import pytest

from entformer.corpus import SynthWorld, build_vocab, generate_corpus, window
from entformer.errors import ConfigError, ValidationError
from entformer.model import ModelConfig, init_params
from entformer.numerics import Tape, Tensor, grad_check, ops
from entformer.pretrain import (
    AdamW,
    PretrainConfig,
    add_pretrain_heads,
    build_pretrain_batch,
    entity_prediction_logits,
    evaluate_masked,
    learning_rate_at,
    lr_schedule,
    make_masking_plan,
    mlm_logits,
    plan_rng,
    pretrain_loop,
    pretrain_loss,
)
from entformer.pretrain.masking import KEEP, MASK, RANDOM


@pytest.fixture(scope="module")
def tiny_world():
    world = SynthWorld(num_entities=8)
    docs = generate_corpus(12, seed=5, world=world)
    vocab = build_vocab(docs, max_words=60, max_entities=10)
    sequences = [s for d in docs for s in window(d, vocab, 64)]
    return world, docs, vocab, sequences


def tiny_params(vocab, dtype="f32", seed=0, **overrides):
    base = dict(
        hidden_size=16, num_layers=1, num_heads=2, head_dim=8, entity_emb_size=8,
        vocab_words=vocab.num_words, vocab_entities=vocab.num_entities,
        max_positions=64, dtype=dtype,
    )
    base.update(overrides)
    config = ModelConfig(**base).validate()
    params = init_params(config, np.random.default_rng(seed))
    add_pretrain_heads(params, np.random.default_rng(seed + 1))
    return params


class TestMaskingPlan:
    def test_zero_probability_empty(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        plan = make_masking_plan(seqs[0], plan_rng(0, 0, 0), 0.0, 0.0, vocab)
        assert plan.word_masks == [] and plan.entity_masks == []

    def test_saturation_all_entities(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        seq = seqs[0]
        plan = make_masking_plan(seq, plan_rng(0, 0, 0), 0.0, 1.0, vocab)
        assert len(plan.entity_masks) == seq.num_entities
        assert [em.gold_id for em in plan.entity_masks] == seq.entity_ids

    def test_specials_never_masked(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        seq = seqs[0]
        plan = make_masking_plan(seq, plan_rng(1, 0, 0), 1.0, 0.0, vocab)
        masked_positions = {wm.position for wm in plan.word_masks}
        assert 0 not in masked_positions
        assert seq.num_words - 1 not in masked_positions
        assert len(masked_positions) == seq.num_words - 2

    def test_reproducible_from_seed_epoch_index(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        a = make_masking_plan(seqs[3], plan_rng(7, 2, 3), 0.5, 0.5, vocab)
        b = make_masking_plan(seqs[3], plan_rng(7, 2, 3), 0.5, 0.5, vocab)
        assert a == b
        c = make_masking_plan(seqs[3], plan_rng(8, 2, 3), 0.5, 0.5, vocab)
        assert a != c or not a.word_masks  # different seed almost surely differs

    def test_binomial_bounds_small(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        n_tokens = 0
        n_masked = 0
        for i in range(400):
            seq = seqs[i % len(seqs)]
            plan = make_masking_plan(seq, plan_rng(3, 0, i), 0.15, 0.0, vocab)
            n_tokens += seq.num_words - 2
            n_masked += len(plan.word_masks)
        p = 0.15
        sigma = np.sqrt(p * (1 - p) / n_tokens)
        assert abs(n_masked / n_tokens - p) < 3 * sigma

    def test_word_actions_follow_split(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        actions = []
        for i in range(300):
            plan = make_masking_plan(seqs[i % len(seqs)], plan_rng(4, 0, i), 1.0, 0.0, vocab)
            actions.extend(wm.action for wm in plan.word_masks)
        n = len(actions)
        for action, p in ((MASK, 0.8), (RANDOM, 0.1), (KEEP, 0.1)):
            frac = sum(a == action for a in actions) / n
            assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / n)

    def test_keep_action_preserves_id(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        for i in range(50):
            plan = make_masking_plan(seqs[i % len(seqs)], plan_rng(5, 0, i), 1.0, 0.0, vocab)
            for wm in plan.word_masks:
                if wm.action == KEEP:
                    assert wm.replacement_id == wm.gold_id
                elif wm.action == MASK:
                    assert wm.replacement_id == vocab.mask_word_id


class TestEntityHead:
    def test_softmax_normalizes(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab, dtype="f64")
        h = Tensor(np.random.default_rng(0).normal(size=(4, 16)))
        logits = entity_prediction_logits(h, params)
        probs = ops.softmax(logits, axis=-1)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_hand_arithmetic_tiny_sizes(self):
        config = ModelConfig(
            hidden_size=4, num_layers=0, num_heads=1, head_dim=4, entity_emb_size=3,
            vocab_words=6, vocab_entities=5, max_positions=4, dtype="f64",
        ).validate()
        params = init_params(config, np.random.default_rng(0))
        add_pretrain_heads(params, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        w_h = rng.normal(size=(4, 4))
        b_h = rng.normal(size=4)
        gain = rng.normal(size=4)
        bias = rng.normal(size=4)
        proj = rng.normal(size=(4, 3))
        out_b = rng.normal(size=5)
        table = rng.normal(size=(5, 3))
        params.tensors["ent_head.dense_w"].data[:] = w_h
        params.tensors["ent_head.dense_b"].data[:] = b_h
        params.tensors["ent_head.ln_gain"].data[:] = gain
        params.tensors["ent_head.ln_bias"].data[:] = bias
        params.tensors["ent_head.proj"].data[:] = proj
        params.tensors["ent_head.out_b"].data[:] = out_b
        params.tensors["embed.entity"].data[:] = table
        h = rng.normal(size=4)

        from scipy.special import erf

        pre = h @ w_h + b_h
        act = 0.5 * pre * (1 + erf(pre / np.sqrt(2)))
        normed = (act - act.mean()) / np.sqrt(act.var() + 1e-5) * gain + bias
        expected = table @ (normed @ proj) + out_b

        got = entity_prediction_logits(Tensor(h), params)
        np.testing.assert_allclose(got.data, expected, rtol=1e-12)

    def test_gradcheck_through_head_tied_tables(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab, dtype="f64")
        rng = np.random.default_rng(3)
        h = Tensor(rng.normal(size=(2, 16)))
        golds = np.array([3, 5])

        def loss():
            logits = entity_prediction_logits(h, params)
            return ops.scale(ops.mean_all(ops.pick(ops.log_softmax(logits, -1), golds)), -1.0)

        watched = {
            name: params[name]
            for name in ("embed.entity", "ent_head.proj", "ent_head.dense_w", "ent_head.out_b")
        }
        watched["h"] = h
        report = grad_check(loss, watched, tol=1e-6, max_samples_per_param=8)
        assert report.passed, report.format_lines()

    def test_mlm_head_ties_to_word_table(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab, dtype="f64")
        h = Tensor(np.random.default_rng(4).normal(size=(3, 16)))
        gold = np.array([6, 7, 8])

        def loss():
            logits = mlm_logits(h, params)
            return ops.scale(ops.mean_all(ops.pick(ops.log_softmax(logits, -1), gold)), -1.0)

        report = grad_check(
            loss, {"embed.word": params["embed.word"], "mlm.dense_w": params["mlm.dense_w"]},
            max_samples_per_param=8,
        )
        assert report.passed, report.format_lines()


class TestPretrainLoss:
    def test_no_masks_degenerate_zero(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab)
        plans = [make_masking_plan(seqs[0], plan_rng(0, 0, 0), 0.0, 0.0, vocab)]
        batch = build_pretrain_batch([seqs[0]], plans, vocab, "f32")
        result = pretrain_loss(batch, params, plans)
        assert result.degenerate
        assert result.loss.item() == 0.0

    def test_perfect_entity_logits_drive_term_to_zero(self, tiny_world):
        from entformer.pretrain import EntityMask, MaskingPlan

        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab)
        seq = next(s for s in seqs if s.num_entities > 0)
        gold = seq.entity_ids[0]
        plans = [MaskingPlan(word_masks=[], entity_masks=[EntityMask(0, gold)])]
        batch = build_pretrain_batch([seq], plans, vocab, "f32")
        # bias the output layer so the gold logit dominates by a huge margin
        params.tensors["ent_head.out_b"].data[:] = -1000.0
        params.tensors["ent_head.out_b"].data[gold] = 1000.0
        result = pretrain_loss(batch, params, plans)
        assert result.entity_loss < 1e-6
        assert result.entity_accuracy == 1.0

    def test_uniform_model_calibrates_to_log_vocab(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab, seed=11)
        plans = [
            make_masking_plan(s, plan_rng(1, 0, i), 1.0, 1.0, vocab) for i, s in enumerate(seqs)
        ]
        batch = build_pretrain_batch(seqs, plans, vocab, "f32")
        result = pretrain_loss(batch, params, plans)
        assert abs(result.mlm_loss - np.log(vocab.num_words)) / np.log(vocab.num_words) < 0.05
        assert abs(result.entity_loss - np.log(vocab.num_entities)) / np.log(vocab.num_entities) < 0.05

    def test_terms_nonnegative_and_total_exact_sum(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab)
        plans = [make_masking_plan(seqs[0], plan_rng(2, 0, 0), 0.5, 0.5, vocab)]
        batch = build_pretrain_batch([seqs[0]], plans, vocab, "f32")
        result = pretrain_loss(batch, params, plans)
        assert result.mlm_loss >= 0.0 and result.entity_loss >= 0.0
        assert result.loss.item() == pytest.approx(result.mlm_loss + result.entity_loss, abs=1e-6)

    def test_entity_term_disabled(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab)
        plans = [make_masking_plan(seqs[0], plan_rng(3, 0, 0), 0.5, 1.0, vocab)]
        batch = build_pretrain_batch([seqs[0]], plans, vocab, "f32")
        result = pretrain_loss(batch, params, plans, entity_loss_enabled=False)
        assert result.entity_loss == 0.0 and result.entity_total == 0

    def test_labels_only_at_masked_positions(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        seq = seqs[0]
        plans = [make_masking_plan(seq, plan_rng(4, 0, 0), 0.3, 0.5, vocab)]
        batch = build_pretrain_batch([seq], plans, vocab, "f32")
        expected_word = {wm.position for wm in plans[0].word_masks}
        assert set(np.nonzero(batch.word_labels[0] >= 0)[0]) == expected_word
        expected_ent = {em.index for em in plans[0].entity_masks}
        assert set(np.nonzero(batch.entity_labels[0] >= 0)[0]) == expected_ent

    def test_misaligned_plan_rejected(self, tiny_world):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab)
        plans = [make_masking_plan(seqs[0], plan_rng(5, 0, 0), 0.5, 0.5, vocab)]
        batch = build_pretrain_batch([seqs[0]], plans, vocab, "f32")
        other = [make_masking_plan(seqs[1], plan_rng(6, 0, 1), 0.5, 0.5, vocab)]
        with pytest.raises(ValidationError):
            pretrain_loss(batch, params, other)


class TestAdamW:
    def test_zero_grad_zero_decay_identity(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab)
        before = {n: t.data.copy() for n, t in params.tensors.items()}
        opt = AdamW(params, weight_decay=0.0)
        opt.step({n: np.zeros_like(t.data) for n, t in params.tensors.items()}, lr=0.1)
        for name, t in params.tensors.items():
            np.testing.assert_array_equal(t.data, before[name])

    def test_hand_computed_first_step(self):
        config = ModelConfig(
            hidden_size=2, num_layers=0, num_heads=1, head_dim=2, entity_emb_size=1,
            vocab_words=5, vocab_entities=2, max_positions=4, dtype="f64",
        ).validate()
        params = init_params(config, np.random.default_rng(0))
        theta0 = params["embed.entity_type"].data.copy()
        opt = AdamW(params, beta1=0.9, beta2=0.999, eps=1e-6, weight_decay=0.0)
        lr = 0.01
        g = np.ones(2)
        opt.step({"embed.entity_type": g}, lr)
        # hand: m=0.1, v=0.001, mhat=1, vhat=1 -> delta = -lr/(1+eps)
        expected = theta0 - lr * 1.0 / (np.sqrt(1.0) + 1e-6)
        np.testing.assert_allclose(params["embed.entity_type"].data, expected, rtol=1e-12)

    def test_lr_zero_identity(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab)
        before = {n: t.data.copy() for n, t in params.tensors.items()}
        opt = AdamW(params, weight_decay=0.0)
        grads = {n: np.ones_like(t.data) for n, t in params.tensors.items()}
        opt.step(grads, lr=0.0)
        for name, t in params.tensors.items():
            np.testing.assert_array_equal(t.data, before[name])

    def test_frozen_params_bitwise_untouched(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab)
        opt = AdamW(params)
        frozen = params.matching(["layer*", "embed.word"])
        opt.set_frozen(frozen)
        before = {n: params[n].data.copy() for n in frozen}
        grads = {n: np.ones_like(t.data) for n, t in params.tensors.items()}
        opt.step(grads, lr=0.01)
        for name in frozen:
            np.testing.assert_array_equal(params[name].data, before[name])
        assert all(opt.steps[n] == 0 for n in frozen)

    def test_decay_skips_biases_and_gains(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab)
        assert not params.decayable("layer0.ln1_gain")
        assert not params.decayable("layer0.attn_out_b")
        assert not params.decayable("embed.entity_type")
        assert params.decayable("layer0.q")
        assert params.decayable("embed.word")

    def test_shape_mismatch_rejected(self, tiny_world):
        _, _, vocab, _ = tiny_world
        params = tiny_params(vocab)
        opt = AdamW(params)
        with pytest.raises(Exception):
            opt.step({"embed.word": np.zeros(3)}, lr=0.1)


class TestSchedule:
    def test_peak_at_warmup(self):
        assert lr_schedule(2500, 2500, 200_000, 5e-4) == pytest.approx(5e-4)

    def test_midpoint_half_peak(self):
        total, warmup, peak = 200_000, 2500, 5e-4
        mid = warmup + (total - warmup) // 2
        # exact midpoint may not be integral; use the formula value
        assert lr_schedule(mid, warmup, total, peak) == pytest.approx(
            peak * (total - mid) / (total - warmup)
        )
        assert lr_schedule(warmup + (total - warmup) / 2, warmup, total, peak) == pytest.approx(peak / 2)

    def test_degenerate_total_rejected(self):
        with pytest.raises(ConfigError):
            lr_schedule(0, 100, 100, 1e-3)

    def test_endpoints_and_linearity(self):
        assert lr_schedule(0, 10, 100, 1.0) == 0.0
        assert lr_schedule(100, 10, 100, 1.0) == 0.0
        values = [lr_schedule(s, 10, 100, 1.0) for s in range(101)]
        assert max(values) == pytest.approx(1.0)
        # piecewise linear: second differences vanish within each phase
        ramp = np.diff(values[:11])
        decay = np.diff(values[11:])
        assert np.allclose(ramp, ramp[0])
        assert np.allclose(decay, decay[0])

    def test_paper_values_accepted_as_config(self):
        cfg = PretrainConfig(
            total_steps=200_000, warmup_steps=2500,
            peak_lr_phase1=5e-4, peak_lr_phase2=1e-5,
        ).validate()
        assert learning_rate_at(2499, cfg) == pytest.approx(5e-4 * 2500 / 2500)


class TestLoop:
    def run_loop(self, tiny_world, tmp_path, seed=0, steps=12, warmup=2, out=None, **cfg_kw):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab, seed=seed)
        cfg = PretrainConfig(
            total_steps=steps, batch_size=4, warmup_steps=warmup, phase1_fraction=0.5,
            seed=seed, log_interval=2, **cfg_kw,
        )
        metrics, opt = pretrain_loop(seqs, params, vocab, cfg, out_dir=out)
        return params, metrics, opt, cfg

    @staticmethod
    def timeless(metrics):
        return [{k: v for k, v in record.items() if k != "wall_ms"} for record in metrics]

    def test_identical_seeds_identical_trajectories(self, tiny_world, tmp_path):
        _, m1, _, _ = self.run_loop(tiny_world, tmp_path, seed=3)
        _, m2, _, _ = self.run_loop(tiny_world, tmp_path, seed=3)
        assert self.timeless(m1) == self.timeless(m2)

    def test_phase_boundary_freezing(self, tiny_world, tmp_path):
        _, _, vocab, seqs = tiny_world
        params = tiny_params(vocab, seed=1)
        frozen_names = params.matching(["layer*", "embed.word", "embed.word_pos", "embed.ln_*", "mlm.*"])
        before = {n: params[n].data.copy() for n in frozen_names}
        cfg = PretrainConfig(
            total_steps=6, batch_size=4, warmup_steps=1, phase1_fraction=1.0,
            seed=1, log_interval=6,
        )
        pretrain_loop(seqs, params, vocab, cfg)
        for name in frozen_names:
            np.testing.assert_array_equal(params[name].data, before[name])
        # now run past the boundary: frozen set must begin moving in phase 2
        params2 = tiny_params(vocab, seed=1)
        cfg2 = PretrainConfig(
            total_steps=6, batch_size=4, warmup_steps=1, phase1_fraction=0.5,
            seed=1, log_interval=6,
        )
        pretrain_loop(seqs, params2, vocab, cfg2)
        moved = [
            n for n in frozen_names
            if not np.array_equal(params2[n].data, before[n])
        ]
        assert moved  # phase 2 updates previously frozen parameters

    def test_mlm_only_entity_loss_zero(self, tiny_world, tmp_path):
        _, metrics, _, _ = self.run_loop(
            tiny_world, tmp_path, steps=6, entity_loss_enabled=False
        )
        assert all(record["entity_loss"] == 0.0 for record in metrics)

    def test_metrics_schema(self, tiny_world, tmp_path):
        _, metrics, _, _ = self.run_loop(tiny_world, tmp_path, steps=4, warmup=1, out=tmp_path / "run")
        expected_keys = {"step", "lr", "mlm_loss", "entity_loss", "mlm_acc", "entity_acc", "wall_ms"}
        assert all(set(r) == expected_keys for r in metrics)
        logged = (tmp_path / "run" / "metrics.jsonl").read_text().strip().splitlines()
        assert len(logged) == len(metrics)

    def test_evaluate_masked_deterministic(self, tiny_world, tmp_path):
        params, _, _, cfg = self.run_loop(tiny_world, tmp_path, steps=4, warmup=1)
        _, _, vocab, seqs = tiny_world
        a = evaluate_masked(seqs, params, vocab, cfg)
        b = evaluate_masked(seqs, params, vocab, cfg)
        assert a == b

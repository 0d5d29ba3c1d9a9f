import numpy as np
import pytest

from entformer.checkpoint import (
    MAGIC,
    deserialize,
    load_checkpoint,
    save_checkpoint,
    serialize,
)
from entformer.corpus import build_vocab, generate_corpus, window
from entformer.errors import CheckpointError
from entformer.model import ModelConfig, init_params
from entformer.pretrain import AdamW, PretrainConfig, add_pretrain_heads, pretrain_loop


def make_params(dtype="f32", seed=0):
    config = ModelConfig(
        hidden_size=8, num_layers=1, num_heads=2, head_dim=4, entity_emb_size=4,
        vocab_words=12, vocab_entities=6, max_positions=16, dtype=dtype,
        attention_mode="entity_aware",
    ).validate()
    params = init_params(config, np.random.default_rng(seed))
    add_pretrain_heads(params, np.random.default_rng(seed + 1))
    return params


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        params = make_params()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {"seed": 3}, {"step": 7})
        first = path.read_bytes()
        loaded, run_config, meta, opt = load_checkpoint(path)
        assert run_config == {"seed": 3}
        assert meta["step"] == 7
        assert opt == {}
        save_checkpoint(path, loaded, run_config, {"step": meta["step"]})
        assert path.read_bytes() == first

    def test_values_and_dtypes_preserved(self, tmp_path):
        for dtype in ("f32", "f64"):
            params = make_params(dtype=dtype)
            path = tmp_path / f"{dtype}.ckpt"
            save_checkpoint(path, params, {}, {})
            loaded, _, _, _ = load_checkpoint(path)
            assert loaded.config.dtype == dtype
            for name, tensor in params.tensors.items():
                assert loaded[name].dtype == tensor.dtype
                np.testing.assert_array_equal(loaded[name].data, tensor.data)

    def test_magic_guard(self, tmp_path):
        with pytest.raises(CheckpointError, match="magic"):
            deserialize(b"NOPE" + b"\x00" * 32)

    def test_header_is_json_with_tensor_manifest(self, tmp_path):
        params = make_params()
        blob = serialize(
            {n: t.data for n, t in params.tensors.items()},
            {"k": 1},
            {"model_config": params.config.to_dict()},
        )
        assert blob[:4] == MAGIC
        arrays, config, meta = deserialize(blob)
        assert set(arrays) == set(params.tensors)
        assert config == {"k": 1}

    def test_optimizer_state_round_trip(self, tmp_path):
        params = make_params()
        opt = AdamW(params)
        grads = {n: np.full_like(t.data, 0.5) for n, t in params.tensors.items()}
        opt.step(grads, lr=1e-3)
        path = tmp_path / "opt.ckpt"
        save_checkpoint(
            path, params, {}, {"optimizer": opt.state_meta()}, opt.state_arrays()
        )
        loaded, _, meta, arrays = load_checkpoint(path)
        fresh = AdamW(loaded)
        fresh.load_state(arrays, meta["optimizer"])
        for name in opt.m:
            np.testing.assert_array_equal(fresh.m[name], opt.m[name])
            np.testing.assert_array_equal(fresh.v[name], opt.v[name])
        assert fresh.steps == opt.steps


class TestResume:
    def test_resumed_run_matches_unresumed(self, tmp_path):
        docs = generate_corpus(10, seed=2)
        vocab = build_vocab(docs, 600, 60)
        seqs = [s for d in docs for s in window(d, vocab, 32)]

        def fresh_params():
            config = ModelConfig(
                hidden_size=16, num_layers=1, num_heads=2, head_dim=8, entity_emb_size=8,
                vocab_words=vocab.num_words, vocab_entities=vocab.num_entities,
                max_positions=32, dtype="f32",
            ).validate()
            p = init_params(config, np.random.default_rng(5))
            add_pretrain_heads(p, np.random.default_rng(6))
            return p

        cfg = PretrainConfig(
            total_steps=10, batch_size=4, warmup_steps=1, phase1_fraction=0.5,
            seed=9, log_interval=1, checkpoint_interval=5,
        )

        straight = fresh_params()
        metrics_straight, _ = pretrain_loop(seqs, straight, vocab, cfg, out_dir=tmp_path / "a")

        resumed, _, meta, opt_arrays = load_checkpoint(tmp_path / "a" / "step000005.ckpt")
        assert meta["step"] == 5
        opt = AdamW(resumed, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
                    weight_decay=cfg.weight_decay)
        opt.load_state(opt_arrays, meta["optimizer"])
        metrics_resumed, _ = pretrain_loop(
            seqs, resumed, vocab, cfg, out_dir=tmp_path / "b",
            start_step=5, optimizer=opt,
        )

        for name in straight.tensors:
            np.testing.assert_array_equal(resumed[name].data, straight[name].data)
        tail = [
            {k: v for k, v in record.items() if k != "wall_ms"}
            for record in metrics_straight
            if record["step"] > 5
        ]
        resumed_tail = [
            {k: v for k, v in record.items() if k != "wall_ms"} for record in metrics_resumed
        ]
        assert tail == resumed_tail

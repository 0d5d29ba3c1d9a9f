"""Masked word and masked entity prediction heads.

Both output projections are tied to the input embeddings: word logits reuse
the word table, entity logits reuse the factored entity table.
"""

from __future__ import annotations

import numpy as np

from ..model.params import ModelParams, _normal, _ones, _zeros
from ..numerics import DTYPES, Tensor, ops


def add_pretrain_heads(params: ModelParams, rng: np.random.Generator) -> None:
    config = params.config
    dt = DTYPES[config.dtype]
    d, h = config.hidden_size, config.entity_emb_size
    params.add("mlm.dense_w", _normal(rng, (d, d), dt))
    params.add("mlm.dense_b", _zeros((d,), dt))
    params.add("mlm.ln_gain", _ones((d,), dt))
    params.add("mlm.ln_bias", _zeros((d,), dt))
    params.add("mlm.out_b", _zeros((config.vocab_words,), dt))
    params.add("ent_head.dense_w", _normal(rng, (d, d), dt))
    params.add("ent_head.dense_b", _zeros((d,), dt))
    params.add("ent_head.ln_gain", _ones((d,), dt))
    params.add("ent_head.ln_bias", _zeros((d,), dt))
    params.add("ent_head.proj", _normal(rng, (d, h), dt))
    params.add("ent_head.out_b", _zeros((config.vocab_entities,), dt))


def _as_rows(h) -> tuple[Tensor, bool]:
    if h.ndim == 1:
        return ops.reshape(h, (1, h.shape[0])), True
    return h, False


def mlm_logits(h, params: ModelParams) -> Tensor:
    """(M, V_w) logits for masked word positions."""
    rows, squeeze = _as_rows(h)
    hidden = ops.layer_norm(
        ops.gelu(ops.add(ops.matmul(rows, params["mlm.dense_w"]), params["mlm.dense_b"])),
        params["mlm.ln_gain"],
        params["mlm.ln_bias"],
        params.config.layer_norm_eps,
    )
    logits = ops.add(
        ops.matmul(hidden, ops.swapaxes(params["embed.word"], 0, 1)), params["mlm.out_b"]
    )
    return ops.reshape(logits, (logits.shape[1],)) if squeeze else logits


def entity_prediction_logits(h, params: ModelParams) -> Tensor:
    """(M, V_e) logits: project the transformed representation back through
    the factored entity table."""
    rows, squeeze = _as_rows(h)
    hidden = ops.layer_norm(
        ops.gelu(ops.add(ops.matmul(rows, params["ent_head.dense_w"]), params["ent_head.dense_b"])),
        params["ent_head.ln_gain"],
        params["ent_head.ln_bias"],
        params.config.layer_norm_eps,
    )
    inner = ops.matmul(hidden, params["ent_head.proj"])
    logits = ops.add(
        ops.matmul(inner, ops.swapaxes(params["embed.entity"], 0, 1)), params["ent_head.out_b"]
    )
    return ops.reshape(logits, (logits.shape[1],)) if squeeze else logits

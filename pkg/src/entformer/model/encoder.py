"""The word+entity transformer encoder.

Tokens are laid out words-first then entities; attention scores pick a query
matrix per (query type, key type) block, which makes the type-aware and
plain modes the same arithmetic whenever the four query matrices are equal.
Padded keys are masked to -inf before the softmax; padded queries exist but
nothing downstream reads them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..numerics import Tensor, ops
from ..corpus.windows import TrainingSequence
from .batch import Batch, build_batch
from .config import ModelConfig
from .params import ModelParams

NEG_INF = float("-inf")


@dataclass
class Encoded:
    h_words: Tensor              # (m, D) or (B, m, D)
    h_entities: Tensor | None    # (n, D) or (B, n, D); None when no entities


def _project(x, w3: Tensor):
    """Apply an (h, L, D) projection to (..., D) rows, giving (..., h*L)."""
    heads, head_dim, d = w3.shape
    flat = ops.reshape(w3, (heads * head_dim, d))
    return ops.matmul(x, ops.swapaxes(flat, 0, 1))


def _split_heads(t, num_heads: int):
    b, k, d = t.shape
    return ops.swapaxes(ops.reshape(t, (b, k, num_heads, d // num_heads)), 1, 2)


def _merge_heads(t):
    b, h, k, head_dim = t.shape
    return ops.reshape(ops.swapaxes(t, 1, 2), (b, k, h * head_dim))


def _query_set(params: ModelParams, layer: int, config: ModelConfig):
    q = params[f"layer{layer}.q"]
    if config.attention_mode == "entity_aware":
        return (
            q,
            params[f"layer{layer}.q_w2e"],
            params[f"layer{layer}.q_e2w"],
            params[f"layer{layer}.q_e2e"],
        )
    return q, q, q, q


def _block_scores(x, num_words: int, params: ModelParams, layer: int, config: ModelConfig):
    """Raw (B, h, k, k) attention scores with per-block query selection."""
    heads = config.num_heads
    k_total = x.shape[1]
    num_entities = k_total - num_words
    q, q_w2e, q_e2w, q_e2e = _query_set(params, layer, config)
    keys = _split_heads(_project(x, params[f"layer{layer}.k"]), heads)

    if num_entities == 0:
        queries = _split_heads(_project(x, q), heads)
        scores = ops.matmul(queries, ops.swapaxes(keys, 2, 3))
    else:
        xw = ops.narrow(x, 1, 0, num_words)
        xe = ops.narrow(x, 1, num_words, k_total)
        kw = ops.narrow(keys, 2, 0, num_words)
        ke = ops.narrow(keys, 2, num_words, k_total)
        qw = _split_heads(_project(xw, q), heads)
        qw2e = qw if q_w2e is q else _split_heads(_project(xw, q_w2e), heads)
        qe2w = _split_heads(_project(xe, q_e2w), heads)
        qe2e = qe2w if q_e2e is q_e2w else _split_heads(_project(xe, q_e2e), heads)
        word_rows = ops.concat(
            [ops.matmul(qw, ops.swapaxes(kw, 2, 3)), ops.matmul(qw2e, ops.swapaxes(ke, 2, 3))],
            axis=3,
        )
        entity_rows = ops.concat(
            [ops.matmul(qe2w, ops.swapaxes(kw, 2, 3)), ops.matmul(qe2e, ops.swapaxes(ke, 2, 3))],
            axis=3,
        )
        scores = ops.concat([word_rows, entity_rows], axis=2)
    return ops.scale(scores, 1.0 / np.sqrt(config.head_dim))


def _attention_sublayer(
    x,
    num_words: int,
    key_mask: np.ndarray | None,
    params: ModelParams,
    layer: int,
    config: ModelConfig,
    rng: np.random.Generator | None,
):
    heads = config.num_heads
    scores = _block_scores(x, num_words, params, layer, config)
    if key_mask is not None:
        keep = key_mask.reshape(key_mask.shape[0], 1, 1, key_mask.shape[1])
        scores = ops.mask_fill(scores, keep, NEG_INF)
    probs = ops.softmax(scores, axis=-1)
    if config.dropout > 0.0 and rng is not None:
        probs = ops.dropout(probs, config.dropout, rng)
    values = _split_heads(_project(x, params[f"layer{layer}.v"]), heads)
    context = _merge_heads(ops.matmul(probs, values))
    out = ops.add(ops.matmul(context, params[f"layer{layer}.attn_out_w"]),
                  params[f"layer{layer}.attn_out_b"])
    return out


def _encoder_layer(x, num_words, key_mask, params, layer, config, rng):
    attn = _attention_sublayer(x, num_words, key_mask, params, layer, config, rng)
    if config.dropout > 0.0 and rng is not None:
        attn = ops.dropout(attn, config.dropout, rng)
    x = ops.layer_norm(
        ops.add(x, attn),
        params[f"layer{layer}.ln1_gain"],
        params[f"layer{layer}.ln1_bias"],
        config.layer_norm_eps,
    )
    hidden = ops.gelu(ops.add(ops.matmul(x, params[f"layer{layer}.ffn_w1"]),
                              params[f"layer{layer}.ffn_b1"]))
    ffn = ops.add(ops.matmul(hidden, params[f"layer{layer}.ffn_w2"]),
                  params[f"layer{layer}.ffn_b2"])
    if config.dropout > 0.0 and rng is not None:
        ffn = ops.dropout(ffn, config.dropout, rng)
    return ops.layer_norm(
        ops.add(x, ffn),
        params[f"layer{layer}.ln2_gain"],
        params[f"layer{layer}.ln2_bias"],
        config.layer_norm_eps,
    )


def embed_inputs(batch: Batch, params: ModelParams, config: ModelConfig):
    """Pre-layer-norm input vectors: (word term, entity term or None).

    Words get token + word-position embeddings.  Entities get the factored
    token embedding, the mean of their span's entity-position embeddings,
    and the entity type vector.
    """
    m = batch.max_words
    if m > config.max_positions:
        raise ValidationError(
            f"sequence of {m} words exceeds max_positions {config.max_positions}"
        )
    word_tok = ops.gather_rows(params["embed.word"], batch.word_ids)
    word_pos = ops.gather_rows(params["embed.word_pos"], np.arange(m))
    word_x = ops.add(word_tok, word_pos)

    use_entities = config.use_entity_inputs and batch.max_entities > 0
    if not use_entities:
        return word_x, None

    table = params["embed.entity"]
    if batch.extra_entity_param:
        table = ops.concat([table, params[batch.extra_entity_param]], axis=0)
    entity_tok = ops.matmul(ops.gather_rows(table, batch.entity_ids), params["embed.entity_proj"])
    entity_pos_rows = ops.gather_rows(params["embed.entity_pos"], np.arange(m))
    averaged = ops.matmul(batch.position_average.astype(entity_pos_rows.dtype), entity_pos_rows)
    entity_x = ops.add(ops.add(entity_tok, averaged), params["embed.entity_type"])
    return word_x, entity_x


def encode_batch(
    batch: Batch,
    params: ModelParams,
    config: ModelConfig | None = None,
    rng: np.random.Generator | None = None,
) -> Encoded:
    """Full encoder pass over a padded batch."""
    config = config or params.config
    m = batch.max_words
    word_x, entity_x = embed_inputs(batch, params, config)

    if entity_x is None:
        x = word_x
        key_mask = batch.word_mask
        num_entities = 0
    else:
        x = ops.concat([word_x, entity_x], axis=1)
        key_mask = np.concatenate([batch.word_mask, batch.entity_mask], axis=1)
        num_entities = batch.max_entities

    x = ops.layer_norm(x, params["embed.ln_gain"], params["embed.ln_bias"], config.layer_norm_eps)
    if config.dropout > 0.0 and rng is not None:
        x = ops.dropout(x, config.dropout, rng)
    if np.all(key_mask):
        key_mask = None  # nothing to mask; keep scores finite

    for layer in range(config.num_layers):
        x = _encoder_layer(x, m, key_mask, params, layer, config, rng)

    h_words = ops.narrow(x, 1, 0, m)
    h_entities = None
    if num_entities:
        h_entities = ops.narrow(x, 1, m, m + num_entities)
    return Encoded(h_words=h_words, h_entities=h_entities)


def sequence_batch(seq: TrainingSequence, pad_word_id: int, dtype: str,
                   extra_entity_param: str | None = None) -> Batch:
    return build_batch([seq], pad_word_id, dtype, extra_entity_param=extra_entity_param)


def encode(
    seq: TrainingSequence,
    params: ModelParams,
    config: ModelConfig | None = None,
    pad_word_id: int = 0,
) -> Encoded:
    """Encode one sequence; outputs are squeezed to (m, D) and (n, D)."""
    config = config or params.config
    batch = sequence_batch(seq, pad_word_id, config.dtype)
    out = encode_batch(batch, params, config)
    h_words = ops.reshape(out.h_words, out.h_words.shape[1:])
    h_entities = None
    if out.h_entities is not None:
        h_entities = ops.reshape(out.h_entities, out.h_entities.shape[1:])
    return Encoded(h_words=h_words, h_entities=h_entities)


def _check_token_types(token_types) -> int:
    types = np.asarray(token_types)
    if types.ndim != 1 or not np.isin(types, (0, 1)).all():
        raise ValidationError("token types must be a flat array of 0 (word) / 1 (entity) flags")
    if np.any(np.diff(types) < 0):
        raise ValidationError("token types must list all words before all entities")
    return int((types == 0).sum())


def attention_scores(
    x: Tensor,
    token_types,
    params: ModelParams,
    layer: int,
    head: int,
    key_mask: np.ndarray | None = None,
    config: ModelConfig | None = None,
) -> Tensor:
    """(k, k) pre-softmax scores for one head; padded keys already at -inf."""
    config = config or params.config
    num_words = _check_token_types(token_types)
    k = x.shape[0]
    x3 = ops.reshape(x, (1, k, x.shape[1]))
    scores = _block_scores(x3, num_words, params, layer, config)
    if key_mask is not None:
        scores = ops.mask_fill(scores, key_mask.reshape(1, 1, 1, k), NEG_INF)
    per_head = ops.narrow(scores, 1, head, head + 1)
    return ops.reshape(per_head, (k, k))


def attend(
    x: Tensor,
    token_types,
    params: ModelParams,
    layer: int,
    key_mask: np.ndarray | None = None,
    config: ModelConfig | None = None,
) -> Tensor:
    """One full attention sublayer on a single sequence: (k, D) outputs."""
    config = config or params.config
    num_words = _check_token_types(token_types)
    k = x.shape[0]
    x3 = ops.reshape(x, (1, k, x.shape[1]))
    mask = key_mask.reshape(1, k) if key_mask is not None else None
    out = _attention_sublayer(x3, num_words, mask, params, layer, config, None)
    return ops.reshape(out, (k, x.shape[1]))

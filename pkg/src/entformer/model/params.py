"""Learnable parameter store.

All parameters live in one flat name -> Tensor map so the optimizer,
checkpointing, freezing, and gradient checking can treat them uniformly.
Entity token embeddings are factored: a (V_e, H) table projected by an
(H, D) matrix, never materialized at (V_e, D).
"""

from __future__ import annotations

import fnmatch

import numpy as np

from ..errors import ValidationError
from ..numerics import DTYPES, Tensor
from .config import ModelConfig

INIT_STD = 0.02

# weight decay skips these (biases, gains, one-off vectors)
_NO_DECAY_SUFFIXES = ("_b", "_bias", "_gain", ".entity_type", "_b1", "_b2")


def attention_query_names(layer: int) -> tuple[str, str, str]:
    return (f"layer{layer}.q_w2e", f"layer{layer}.q_e2w", f"layer{layer}.q_e2e")


class ModelParams:
    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise ValidationError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def matching(self, patterns: list[str]) -> set[str]:
        hits = set()
        for pattern in patterns:
            hits.update(n for n in self.tensors if fnmatch.fnmatchcase(n, pattern))
        return hits

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self.tensors:
            raise ValidationError(f"parameter {name!r} already exists")
        tensor.name = name
        self.tensors[name] = tensor

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def astype(self, dtype: str) -> "ModelParams":
        from dataclasses import replace

        return ModelParams(
            replace(self.config, dtype=dtype),
            {n: t.astype(DTYPES[dtype]) for n, t in self.tensors.items()},
        )

    def decayable(self, name: str) -> bool:
        return not name.endswith(_NO_DECAY_SUFFIXES)


def _normal(rng: np.random.Generator, shape, dtype) -> Tensor:
    return Tensor((rng.normal(0.0, INIT_STD, size=shape)).astype(dtype))


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh encoder parameters: normal(0, 0.02) weights, zero biases, unit gains."""
    config.validate()
    dt = DTYPES[config.dtype]
    d, h, head_dim = config.hidden_size, config.num_heads, config.head_dim
    f = config.ffn_multiplier * d
    t: dict[str, Tensor] = {}

    t["embed.word"] = _normal(rng, (config.vocab_words, d), dt)
    t["embed.entity"] = _normal(rng, (config.vocab_entities, config.entity_emb_size), dt)
    t["embed.entity_proj"] = _normal(rng, (config.entity_emb_size, d), dt)
    t["embed.word_pos"] = _normal(rng, (config.max_positions, d), dt)
    t["embed.entity_pos"] = _normal(rng, (config.max_positions, d), dt)
    t["embed.entity_type"] = _normal(rng, (d,), dt)
    t["embed.ln_gain"] = _ones((d,), dt)
    t["embed.ln_bias"] = _zeros((d,), dt)

    for i in range(config.num_layers):
        p = f"layer{i}"
        t[f"{p}.q"] = _normal(rng, (h, head_dim, d), dt)
        t[f"{p}.k"] = _normal(rng, (h, head_dim, d), dt)
        t[f"{p}.v"] = _normal(rng, (h, head_dim, d), dt)
        if config.attention_mode == "entity_aware":
            for name in attention_query_names(i):
                t[name] = _normal(rng, (h, head_dim, d), dt)
        t[f"{p}.attn_out_w"] = _normal(rng, (d, d), dt)
        t[f"{p}.attn_out_b"] = _zeros((d,), dt)
        t[f"{p}.ln1_gain"] = _ones((d,), dt)
        t[f"{p}.ln1_bias"] = _zeros((d,), dt)
        t[f"{p}.ffn_w1"] = _normal(rng, (d, f), dt)
        t[f"{p}.ffn_b1"] = _zeros((f,), dt)
        t[f"{p}.ffn_w2"] = _normal(rng, (f, d), dt)
        t[f"{p}.ffn_b2"] = _zeros((d,), dt)
        t[f"{p}.ln2_gain"] = _ones((d,), dt)
        t[f"{p}.ln2_bias"] = _zeros((d,), dt)

    params = ModelParams(config, t)
    for name, tensor in t.items():
        tensor.name = name
    return params


def install_entity_aware_queries(params: ModelParams) -> None:
    """Switch to entity-aware attention with the extra query matrices copying Q."""
    from dataclasses import replace

    for i in range(params.config.num_layers):
        q = params[f"layer{i}.q"]
        for name in attention_query_names(i):
            if name not in params:
                params.add(name, q.copy(name=name))
    params.config = replace(params.config, attention_mode="entity_aware")

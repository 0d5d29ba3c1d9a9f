"""Encoder hyper-parameter surface."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ConfigError

ATTENTION_MODES = ("original", "entity_aware")


@dataclass
class ModelConfig:
    hidden_size: int = 64          # token representation width
    num_layers: int = 2
    num_heads: int = 4
    head_dim: int = 16             # per-head attention width
    entity_emb_size: int = 32      # inner width of the factored entity table
    vocab_words: int = 200
    vocab_entities: int = 50
    max_positions: int = 512
    ffn_multiplier: int = 4
    attention_mode: str = "original"
    use_entity_inputs: bool = True
    dropout: float = 0.0
    layer_norm_eps: float = 1e-5
    dtype: str = "f32"

    def problems(self) -> list[str]:
        issues = []
        if self.hidden_size != self.num_heads * self.head_dim:
            issues.append(
                f"hidden_size ({self.hidden_size}) must equal num_heads*head_dim "
                f"({self.num_heads}*{self.head_dim})"
            )
        if self.entity_emb_size > self.hidden_size:
            issues.append(
                f"entity_emb_size ({self.entity_emb_size}) must be <= hidden_size "
                f"({self.hidden_size})"
            )
        if self.num_layers < 0:
            issues.append("num_layers must be >= 0")
        if self.vocab_words < 5:
            issues.append("vocab_words must hold the five word specials")
        if self.vocab_entities < 2:
            issues.append("vocab_entities must hold the two entity specials")
        if self.max_positions < 3:
            issues.append("max_positions must be >= 3")
        if self.ffn_multiplier < 1:
            issues.append("ffn_multiplier must be >= 1")
        if self.attention_mode not in ATTENTION_MODES:
            issues.append(f"attention_mode must be one of {ATTENTION_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            issues.append("dropout must be in [0, 1)")
        if self.dtype not in ("f32", "f64"):
            issues.append("dtype must be 'f32' or 'f64'")
        return issues

    def validate(self) -> "ModelConfig":
        issues = self.problems()
        if issues:
            raise ConfigError(issues)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown model config key: {k}" for k in unknown])
        return cls(**data).validate()

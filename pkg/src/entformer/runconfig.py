"""The run configuration: one JSON document covering model, pretraining,
fine-tuning, and data paths.  Unknown keys are rejected and every problem is
reported in a single pass."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model.config import ModelConfig
from .pretrain.loop import PretrainConfig
from .tasks.finetune import FinetuneConfig


@dataclass
class DataConfig:
    corpus: str = "corpus.jsonl"
    vocab: str = "vocab.json"
    dictionary: str = "dictionary.tsv"
    train: str = ""
    dev: str = ""
    eval: str = ""
    max_word_length: int = 512
    vocab_max_words: int = 50_000
    vocab_max_entities: int = 500_000

    def problems(self) -> list[str]:
        issues = []
        if self.max_word_length < 16:
            issues.append("data.max_word_length must be >= 16")
        if self.vocab_max_words < 5:
            issues.append("data.vocab_max_words must be >= 5")
        if self.vocab_max_entities < 2:
            issues.append("data.vocab_max_entities must be >= 2")
        return issues


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def problems(self) -> list[str]:
        issues = []
        issues.extend(self.model.problems())
        issues.extend(self.pretrain.problems())
        issues.extend(self.finetune.problems())
        issues.extend(self.data.problems())
        return issues

    def validate(self) -> "RunConfig":
        issues = self.problems()
        if issues:
            raise ConfigError(issues)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            seed=seed,
            pretrain=replace(self.pretrain, seed=seed),
            finetune=replace(self.finetune, seed=seed),
        )


_SECTIONS = {
    "model": ModelConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "data": DataConfig,
}


def _build_section(cls, data: dict, prefix: str, issues: list[str]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    issues.extend(f"unknown key {prefix}.{key}" for key in unknown)
    kwargs = {k: v for k, v in data.items() if k in known}
    if cls is PretrainConfig and "word_mask_split" in kwargs:
        kwargs["word_mask_split"] = tuple(kwargs["word_mask_split"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        issues.append(f"bad {prefix} section: {exc}")
        return cls()


def config_from_dict(data: dict) -> RunConfig:
    issues: list[str] = []
    top_known = {"seed", "out_dir", *_SECTIONS}
    issues.extend(f"unknown key {key}" for key in sorted(set(data) - top_known))
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name] = _build_section(cls, data.get(name, {}), name, issues)
    config = RunConfig(
        seed=int(data.get("seed", 0)),
        out_dir=str(data.get("out_dir", "runs/default")),
        **sections,
    )
    issues.extend(config.problems())
    if issues:
        raise ConfigError(issues)
    return config.with_seed(config.seed)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().with_seed(0)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file is not valid JSON: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a JSON object"])
    return config_from_dict(data)

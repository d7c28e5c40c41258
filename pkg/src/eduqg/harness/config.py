"""Experiment configuration: a hierarchical YAML file normalized into a
dataclass whose canonical JSON form is hashed for caching and manifests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import yaml

from ..generation import DecodeSpec
from ..model import ModelConfig, PRESETS
from ..trainer import Stage, TrainSpec


class ModelKey(str, Enum):
    LEAF = "leaf"
    EDUQG_SMALL = "eduqg_small"
    EDUQG_LARGE = "eduqg_large"
    LEAF_PLUS = "leaf_plus"
    EDUQG_PLUS = "eduqg_plus"


_DEFAULT_STAGE_PARAMS = {
    # Declared defaults; every run records the effective values in provenance.
    "pretrain": {
        "steps": 300,
        "batch_size": 8,
        "learning_rate": 1e-3,
        "schedule": "inverse_sqrt",
        "warmup_steps": 50,
        "corruption_rate": 0.15,
        "mean_span_len": 3.0,
    },
    "finetune_squad": {
        "epochs": 10,
        "batch_size": 8,
        "learning_rate": 1e-3,
        "schedule": "constant",
    },
    "finetune_sciq": {
        "epochs": 10,
        "batch_size": 8,
        "learning_rate": 1e-3,
        "schedule": "constant",
    },
}


@dataclass
class ExperimentConfig:
    run_dir: str
    datasets: dict[str, str]                      # s2orc, squad, sciq_train, sciq_test
    models: list[ModelKey] = field(default_factory=lambda: list(ModelKey))
    seed: int = 0
    model_preset: str = "toy"
    model_dims: dict | None = None                # overrides the preset's dimensions
    base_checkpoint: str | None = None
    fields_of_study: list[str] | None = None
    # Desk-scale defaults; the full-scale profile raises these in config only.
    pretrain_small: int = 2_000
    pretrain_large: int = 20_000
    vocab_words: int = 8_000
    num_sentinels: int = 100
    max_input_len: int = 512
    max_target_len: int = 64
    qg_prefix: str = "generate question: "
    stages: dict[str, dict] = field(default_factory=dict)
    decode: dict = field(default_factory=dict)
    scorer: dict = field(default_factory=lambda: {"kind": "ngram", "order": 2,
                                                  "alpha": 0.1, "fit_on": "s2orc"})

    def __post_init__(self):
        self.models = [ModelKey(m) for m in self.models]
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate model keys in config")
        for required in ("s2orc", "squad", "sciq_train", "sciq_test"):
            if required not in self.datasets:
                raise ValueError(f"datasets.{required} missing from config")
        if self.model_preset not in PRESETS:
            raise ValueError(f"unknown model preset {self.model_preset!r}; "
                             f"expected one of {sorted(PRESETS)}")
        merged = {}
        for name, defaults in _DEFAULT_STAGE_PARAMS.items():
            merged[name] = {**defaults, **self.stages.get(name, {})}
        self.stages = merged

    # -- loading -------------------------------------------------------------

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        payload = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return cls(**payload)

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.canonical_dict(), sort_keys=True),
                              encoding="utf-8")

    # -- derived objects -----------------------------------------------------

    def model_config(self, vocab_size: int) -> ModelConfig:
        base = PRESETS[self.model_preset](vocab_size)
        if self.model_dims:
            params = {**asdict(base), **self.model_dims, "vocab_size": vocab_size}
            base = ModelConfig(**params)
        return base

    def decode_spec(self) -> DecodeSpec:
        return DecodeSpec(**self.decode) if self.decode else DecodeSpec()

    def train_spec(self, stage_name: str, dataset_id: str) -> TrainSpec:
        params = dict(self.stages[stage_name])
        stage = Stage.PRETRAIN if stage_name == "pretrain" else Stage.FINETUNE
        return TrainSpec(stage=stage, dataset_id=dataset_id, seed=self.seed,
                         qg_prefix=self.qg_prefix, max_input_len=self.max_input_len,
                         max_target_len=self.max_target_len, **params)

    # -- hashing ---------------------------------------------------------------

    def canonical_dict(self) -> dict:
        payload = asdict(self)
        payload["models"] = [m.value for m in self.models]
        return payload

    def config_hash(self) -> str:
        canon = json.dumps(self.canonical_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

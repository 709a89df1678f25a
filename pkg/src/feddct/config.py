"""Experiment configuration: one JSON document, validated before any compute.

Unknown keys are rejected at every level so a typo never silently falls back
to a default.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import AugmentPolicy
from .orchestration import Architecture, RoundConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetConfig(_Strict):
    kind: Literal["blobs", "csv"] = "blobs"
    n_samples: int = Field(1200, ge=2)
    n_test: int = Field(400, ge=1)
    classes: int = Field(4, ge=2)
    dim: int = Field(16, ge=1)
    separation: float = Field(6.0, gt=0)
    path: Optional[str] = None
    partition: Literal["iid", "noniid"] = "iid"

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "csv" and not self.path:
            raise ValueError("dataset.kind='csv' requires dataset.path")
        if self.kind == "blobs" and self.n_test >= self.n_samples:
            raise ValueError("dataset.n_test must be smaller than dataset.n_samples")
        return self


class ModelConfig(_Strict):
    architecture: Literal["mlp", "dctnet"] = "mlp"
    hidden_widths: list[int] = Field(default_factory=lambda: [128, 128], min_length=1)
    image_shape: Optional[list[int]] = None
    dropout: float = Field(0.0, ge=0, lt=1)
    cut_layer: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("model.hidden_widths entries must be >= 1")
        if self.architecture == "dctnet" and (self.image_shape is None or len(self.image_shape) != 3):
            raise ValueError("model.image_shape must be [channels, height, width] for dctnet")
        return self


class AugmentConfig(_Strict):
    flip: bool = True
    noise_std: float = Field(0.1, ge=0)
    erase_prob: float = Field(0.25, ge=0, le=1)
    erase_frac: float = Field(0.25, gt=0, le=1)


class TrainingConfig(_Strict):
    n_clients: int = Field(8, ge=1)
    split_factor: int = Field(4, ge=1)
    rounds: int = Field(50, ge=1)
    local_epochs: int = Field(1, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    lambda_cot: float = Field(0.5, ge=0)
    warmup_rounds: int = Field(0, ge=0)
    rotation: Literal["sequential", "random"] = "sequential"
    augment: AugmentConfig = AugmentConfig()


class OutputConfig(_Strict):
    dir: str = "runs/default"
    metrics: str = "metrics.csv"
    checkpoint: str = "final.ckpt"
    manifest: str = "manifest.json"
    trace: Optional[str] = None


class ExperimentConfig(_Strict):
    algorithm: Literal["feddct", "fedavg"] = "feddct"
    seed: int = Field(0, ge=0)
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    training: TrainingConfig = TrainingConfig()
    output: OutputConfig = OutputConfig()

    def round_config(self, split_factor: int | None = None) -> RoundConfig:
        t = self.training
        image_shape = tuple(self.model.image_shape) if self.model.image_shape else None
        return RoundConfig(n_clients=t.n_clients, split_factor=t.split_factor if split_factor is None else split_factor,
                           local_epochs=t.local_epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
                           momentum=t.momentum, weight_decay=t.weight_decay, lambda_cot=t.lambda_cot,
                           total_rounds=t.rounds, warmup_rounds=t.warmup_rounds, seed=self.seed,
                           rotation=t.rotation, augment=AugmentPolicy(image_shape=image_shape, **t.augment.model_dump()))

    def architecture(self, n_features: int, n_classes: int) -> Architecture:
        m = self.model
        shape = tuple(m.image_shape) if m.architecture == "dctnet" else (n_features,)
        return Architecture(m.architecture, shape, n_classes, tuple(m.hidden_widths), m.dropout)

    def output_path(self, name: str) -> Path:
        return Path(self.output.dir) / name


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(doc)

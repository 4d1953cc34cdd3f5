"""Run configuration: defaults, JSON loading, and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping


class ConfigError(Exception):
    """Raised for unusable configuration files or option combinations."""


@dataclass
class TrainConfig:
    """Everything a training run needs; defaults follow the reference
    hyperparameters (4 intervals, 32 prototypes per interval, temperature
    0.5, both auxiliary weights 0.2, Adam at 1e-4 with 1e-4 decay)."""

    # survival discretization and prototype geometry
    num_bins: int = 4
    prototypes_per_bin: int = 32
    # loss balance and attention temperature
    temperature: float = 0.5
    similarity_weight: float = 0.2
    alignment_weight: float = 0.2
    # optimization
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    max_epochs: int = 50
    grad_accumulation: int = 1
    # chance of presenting a complete training sample through one of the
    # unimodal routes (split evenly between the two); exercises the
    # missing-modality paths even when the dataset itself is complete
    modality_dropout: float = 0.0
    # architecture
    embed_dim: int = 256
    num_layers: int = 2
    num_heads: int = 8
    genomics_dropout: float = 0.1
    max_patches: int = 4096
    # bookkeeping
    seed: int = 0
    fold: int = 0
    folds: int = 5
    device: str = "cpu"
    manifest: str | None = None
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.num_bins < 2:
            raise ConfigError("num_bins must be at least 2")
        for name in ("prototypes_per_bin", "max_epochs", "grad_accumulation",
                     "embed_dim", "num_layers", "num_heads", "max_patches", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("temperature", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("similarity_weight", "alignment_weight", "weight_decay", "genomics_dropout"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.modality_dropout < 1:
            raise ConfigError(f"modality_dropout must lie in [0, 1), got {self.modality_dropout}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}"
            )
        if not 0 <= self.fold < self.folds:
            raise ConfigError(f"fold {self.fold} out of range for {self.folds} folds")


def _build(cls, payload: Mapping[str, Any], source: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {unknown}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    return payload


def load_train_config(path=None, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    """Build a :class:`TrainConfig` from an optional JSON file plus
    overrides; unknown keys are rejected rather than ignored."""
    payload: dict[str, Any] = load_json(path) if path is not None else {}
    if overrides:
        payload.update({k: v for k, v in overrides.items() if v is not None})
    return _build(TrainConfig, payload, str(path) if path else "overrides")

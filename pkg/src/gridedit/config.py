"""Configuration dataclasses and the flat key=value config-file format.

Config files are plain text, one ``key = value`` pair per line, ``#`` for
comments. Values are parsed as JSON literals where possible (numbers, lists,
booleans) and kept as strings otherwise. Model fields are addressed with a
``model_`` prefix, e.g. ``model_base_channels = 16``. Unknown keys are
rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ValidationError


@dataclass
class ModelConfig:
    channels: int = 3
    base_channels: int = 16
    levels: int = 2
    emb_dim: int = 32
    cond_channels: int = 8
    state_dim: int = 4
    text_dim: int = 24
    schedule_steps: int = 50
    grey: float = 0.5
    guidance_scale: float = 7.5
    latent: str = "identity"

    def __post_init__(self):
        if self.levels < 1:
            raise ValidationError("levels must be >= 1")
        if self.schedule_steps < 1:
            raise ValidationError("schedule_steps must be >= 1")


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lambda_es: float = 0.1
    lambda_sam: float = 1.0
    drop_fraction: float = 0.15
    liu_fraction: float = 0.5
    seed: int = 0
    checkpoint_every: int = 250
    sam_normalize_by_mask: bool = False
    drop_exclusive: bool = True
    selected_classes: tuple[str, ...] = ("human", "creature")
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lambda_es < 0 or self.lambda_sam < 0:
            raise ValidationError("loss weights must be >= 0")
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise ValidationError("drop_fraction must lie in [0, 1]")
        if not 0.0 <= self.liu_fraction <= 1.0:
            raise ValidationError("liu_fraction must lie in [0, 1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ValidationError("steps must be >= 0 and batch_size >= 1")
        self.selected_classes = tuple(self.selected_classes)


@dataclass
class DatasetConfig:
    n_groups: int = 50
    captions_per_group: int = 5
    candidates_per_pair: int = 5
    image_size: int = 32
    seed: int = 0
    train_fraction: float = 0.8
    packs_per_group: int = 2
    indomain_packs_per_group: int = 1
    ood_packs_per_group: int = 3
    grey: float = 0.5
    selected_classes: tuple[str, ...] = ("human", "creature")

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValidationError("n_groups must be >= 1")
        if self.candidates_per_pair < 1:
            raise ValidationError("candidates_per_pair must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.image_size % 2 != 0:
            raise ValidationError("image_size must be even")
        self.selected_classes = tuple(self.selected_classes)


@dataclass
class ProviderConfig:
    embedder: str = "mock"
    segmenter: str = "mock"
    unifier: str = "mock"


def read_flat_config(path: str | Path) -> dict:
    """Parse a key=value config file into a dict of typed values."""
    mapping: dict = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        try:
            mapping[key] = json.loads(value)
        except json.JSONDecodeError:
            mapping[key] = value
    return mapping


def _build(cls, mapping: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ValidationError(
            f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**mapping)


def split_train_mapping(mapping: dict) -> tuple[dict, dict, dict]:
    """Route a flat mapping into (train, model, provider) key groups."""
    provider_names = {f.name for f in fields(ProviderConfig)}
    train_names = {f.name for f in fields(TrainConfig)} - {"model"}
    model_names = {f.name for f in fields(ModelConfig)}
    train: dict = {}
    model: dict = {}
    provider: dict = {}
    for key, value in mapping.items():
        if key in provider_names:
            provider[key] = value
        elif key.startswith("model_") and key[len("model_"):] in model_names:
            model[key[len("model_"):]] = value
        elif key in train_names:
            train[key] = value
        else:
            raise ValidationError(f"unknown config key: {key}")
    return train, model, provider


def train_config_from_mapping(mapping: dict) -> tuple[TrainConfig, ProviderConfig]:
    train, model, provider = split_train_mapping(mapping)
    cfg = _build(TrainConfig, {**train, "model": _build(ModelConfig, model)})
    return cfg, _build(ProviderConfig, provider)


def dataset_config_from_mapping(mapping: dict) -> tuple[DatasetConfig, ProviderConfig]:
    provider_names = {f.name for f in fields(ProviderConfig)}
    provider = {k: v for k, v in mapping.items() if k in provider_names}
    rest = {k: v for k, v in mapping.items() if k not in provider_names}
    return _build(DatasetConfig, rest), _build(ProviderConfig, provider)


def train_config_from_dict(payload: dict) -> TrainConfig:
    """Rebuild a TrainConfig from its dataclasses.asdict form."""
    data = dict(payload)
    model = data.pop("model", None) or {}
    return TrainConfig(**{**data, "model": ModelConfig(**model)})


def config_as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)

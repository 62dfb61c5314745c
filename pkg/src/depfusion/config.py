"""Flat ``key = value`` configuration shared by every CLI command.

Lines starting with ``#`` are comments.  Empty values mean "unset".  Pairs
such as ranges and fusion weights are written ``a,b``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .augment import AugmentPolicy
from .detect import DetectorConfig
from .errors import ConfigurationError
from .evalfuse import FusionWeights
from .net import ModelConfig
from .trainer import TrainConfig

_SECTION = "depfusion"


@dataclass
class PipelineConfig:
    corpus_root: str = "data/frames"
    labels_file: str = "data/labels.csv"
    layout: str = "generic"
    corpus_name: str = ""
    stride: int = 1
    out: str = "runs/default"
    target_size: int = 224
    pad_policy: str = "replicate"
    workers: int = 1

    detector_backend: str = "synthetic_oracle"
    min_confidence: float = 0.9
    detector_model_path: str = ""

    backbone: str = "resnet50"
    pretrained_source: str = "generic_imagenet"
    weights_path: str = ""
    head_widths: tuple = (512, 128)

    batch_size: int = 32
    max_epochs: int = 30
    seed: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6
    plateau_threshold: float = 1e-4
    init_bias_from_labels: bool = True
    cache_crops: bool = True

    flip_probability: float = 0.5
    brightness_range: tuple = (0.8, 1.2)
    contrast_range: tuple = (0.8, 1.2)
    saturation_range: tuple = (0.8, 1.2)

    fusion_weights: tuple = (0.5, 0.5)
    protocol: str = "separated"
    partition: str = "test"
    checkpoint_pose_dependent: str = ""
    checkpoint_pose_independent: str = ""

    # -- derived paths ---------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.csv"

    @property
    def crops_root(self) -> Path:
        return self.out_dir / "crops"

    @property
    def predictions_dir(self) -> Path:
        return self.out_dir / "predictions"

    @property
    def eval_dir(self) -> Path:
        return self.out_dir / "eval"

    def model_dir(self, stream: str) -> Path:
        return self.out_dir / "models" / stream

    def checkpoint(self, stream: str) -> Path:
        explicit = getattr(self, f"checkpoint_{stream}")
        return Path(explicit) if explicit else self.model_dir(stream) / "best.pt"

    # -- module configs --------------------------------------------------

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(self.detector_backend, self.min_confidence,
                              self.detector_model_path or None)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.backbone, self.pretrained_source, tuple(self.head_widths),
                           self.target_size, self.weights_path or None)

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(self.flip_probability, tuple(self.brightness_range),
                             tuple(self.contrast_range), tuple(self.saturation_range), self.seed)

    def weights(self) -> FusionWeights:
        return FusionWeights(*self.fusion_weights)

    def train_config(self, stream: str) -> TrainConfig:
        return TrainConfig(
            stream=stream, manifest_path=str(self.manifest_path), crops_root=str(self.crops_root),
            checkpoint_dir=str(self.model_dir(stream)), batch_size=self.batch_size,
            max_epochs=self.max_epochs, seed=self.seed, model=self.model_config(),
            augment=self.augment_policy(), lr=self.lr, betas=(self.beta1, self.beta2),
            eps=self.eps, lookahead_k=self.lookahead_k, lookahead_alpha=self.lookahead_alpha,
            plateau_factor=self.plateau_factor, plateau_patience=self.plateau_patience,
            min_lr=self.min_lr, plateau_threshold=self.plateau_threshold,
            init_bias_from_labels=self.init_bias_from_labels, cache_crops=self.cache_crops)

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in fields(self)}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, path) -> None:
        lines = ["# depfusion pipeline configuration"]
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        Path(path).write_text("\n".join(lines) + "\n")


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _convert(key: str, raw: str):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v) for v in raw.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return raw


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read ``path`` (if given) and apply ``overrides`` (already typed or strings)."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(f"[{_SECTION}]\n" + path.read_text())
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        unknown = sorted(set(parser[_SECTION]) - set(_FIELDS))
        if unknown:
            raise ConfigurationError(f"unknown config keys in {path}: {', '.join(unknown)}")
        for key, raw in parser[_SECTION].items():
            if raw.strip():
                values[key] = _convert(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown config key {key}")
        values[key] = _convert(key, value) if isinstance(value, str) else value
    if "DEPFUSION_WORKERS" in os.environ and "workers" not in (overrides or {}):
        values["workers"] = _convert("workers", os.environ["DEPFUSION_WORKERS"])
    return dataclasses.replace(PipelineConfig(), **values)

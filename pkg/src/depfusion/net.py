"""ResNet-50 backbone with a two-layer fully connected regression head.

features (2048) -> FC 512 -> ReLU -> FC 128 -> ReLU -> FC 1

Every parameter stays trainable.  Inputs are RGB crops in [0, 1]; channel
normalization happens inside the model with the statistics of the chosen
pretrained source, which are also stored in checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch
from torch import nn

from .errors import (CheckpointError, InitializationError, InvalidInputError, NumericError,
                     ParameterError)

BACKBONES = ("resnet50", "tiny_test_backbone")
PRETRAINED_SOURCES = ("face_recognition_weights", "generic_imagenet", "random")
FEATURE_DIMS = {"resnet50": 2048, "tiny_test_backbone": 64}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# face-recognition trunks are usually trained on inputs mapped to [-1, 1]
FACE_MEAN = (0.5, 0.5, 0.5)
FACE_STD = (0.5, 0.5, 0.5)

BDI_RANGE = (0.0, 63.0)


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "resnet50"
    pretrained_source: str = "generic_imagenet"
    head_widths: tuple[int, int] = (512, 128)
    input_size: int = 224
    weights_path: str | None = None
    output_bias: float = 0.0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ParameterError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.pretrained_source not in PRETRAINED_SOURCES:
            raise ParameterError(f"unknown pretrained source {self.pretrained_source!r}")
        widths = tuple(self.head_widths)
        if len(widths) != 2 or any(int(w) != w or w < 1 for w in widths):
            raise ParameterError(f"head_widths must be two positive integers, got {self.head_widths}")
        object.__setattr__(self, "head_widths", tuple(int(w) for w in widths))
        if self.input_size < 8:
            raise ParameterError(f"input_size must be >= 8, got {self.input_size}")

    @property
    def feature_dim(self) -> int:
        return FEATURE_DIMS[self.backbone]

    @property
    def normalization(self) -> tuple[tuple, tuple]:
        if self.pretrained_source == "face_recognition_weights":
            return FACE_MEAN, FACE_STD
        return IMAGENET_MEAN, IMAGENET_STD

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_widths"] = list(self.head_widths)
        return d

    def architecture(self) -> dict:
        """Fields that determine parameter shapes."""
        return {"backbone": self.backbone, "head_widths": list(self.head_widths)}


def _tiny_backbone() -> nn.Sequential:
    def block(cin, cout):
        return [nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]

    return nn.Sequential(*block(3, 16), *block(16, 32), *block(32, 64),
                         nn.AdaptiveAvgPool2d(1), nn.Flatten())


def _resnet50_backbone(config: ModelConfig) -> nn.Module:
    from torchvision.models import ResNet50_Weights, resnet50

    if config.pretrained_source == "generic_imagenet" and config.weights_path is None:
        try:
            model = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2)
        except Exception as exc:  # download or cache failures
            raise InitializationError(
                f"could not fetch ImageNet ResNet-50 weights ({exc}); set weights_path") from exc
    else:
        model = resnet50(weights=None)
        if config.pretrained_source != "random":
            _load_trunk_weights(model, config.weights_path)
    model.fc = nn.Identity()
    return model


def _load_trunk_weights(model: nn.Module, weights_path) -> None:
    if weights_path is None or not Path(weights_path).is_file():
        raise InitializationError(f"pretrained weight file not found: {weights_path}")
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise InitializationError(f"cannot read weights {weights_path}: {exc}") from exc
    state = state.get("state_dict", state)
    state = {k.removeprefix("module."): v for k, v in state.items() if not k.startswith("fc.")}
    try:
        missing, unexpected = model.load_state_dict(state, strict=False)
    except RuntimeError as exc:  # shape mismatches
        raise InitializationError(f"{weights_path} does not fit a ResNet-50 trunk: {exc}") from exc
    missing = [k for k in missing if not k.startswith("fc.")]
    if missing or unexpected:
        raise InitializationError(
            f"{weights_path} does not fit a ResNet-50 trunk "
            f"(missing {missing[:3]}..., unexpected {unexpected[:3]}...)")


class RegressionHead(nn.Sequential):
    def __init__(self, in_features: int, widths=(512, 128), output_bias: float = 0.0):
        w1, w2 = widths
        super().__init__(nn.Linear(in_features, w1), nn.ReLU(inplace=True),
                         nn.Linear(w1, w2), nn.ReLU(inplace=True),
                         nn.Linear(w2, 1))
        # He init for the rectified layers, small output layer
        for layer in (self[0], self[2]):
            nn.init.kaiming_normal_(layer.weight, nonlinearity="relu")
            nn.init.zeros_(layer.bias)
        nn.init.normal_(self[4].weight, std=0.01)
        nn.init.constant_(self[4].bias, output_bias)


class DepressionRegressor(nn.Module):
    """Backbone + regression head; ``forward`` maps Bx3xSxS crops to B scores."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.backbone == "tiny_test_backbone":
            self.backbone = _tiny_backbone()
        else:
            self.backbone = _resnet50_backbone(config)
        self.head = RegressionHead(config.feature_dim, config.head_widths, config.output_bias)
        mean, std = config.normalization
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.config.input_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, s, s):
            raise InvalidInputError(f"expected a Bx3x{s}x{s} batch, got {tuple(x.shape)}")
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        return self.head(self.backbone(x)).squeeze(1)


def build_model(config: ModelConfig, seed: int | None = 0) -> DepressionRegressor:
    if seed is not None:
        torch.manual_seed(seed)
    model = DepressionRegressor(config)
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def head_parameter_count(feature_dim: int, widths=(512, 128)) -> int:
    w1, w2 = widths
    return feature_dim * w1 + w1 + w1 * w2 + w2 + w2 + 1


def clamp_score(raw: float, low: float = BDI_RANGE[0], high: float = BDI_RANGE[1]) -> float:
    """Clip an inference-time score into the BDI-II range."""
    raw = float(raw)
    if not math.isfinite(raw):
        raise NumericError(f"non-finite score {raw}")
    return min(max(raw, low), high)


def to_batch(images) -> torch.Tensor:
    """Stack HxWx3 float arrays into a Bx3xHxW float32 tensor."""
    return torch.stack([torch.from_numpy(img).permute(2, 0, 1).float() for img in images])


@dataclass
class ModelState:
    """Serializable view of a model: config, weights and bookkeeping."""

    config: ModelConfig
    parameters: dict
    version: int = 1
    step: int = 0
    metadata: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: DepressionRegressor, step: int = 0) -> "ModelState":
        mean, std = model.config.normalization
        return cls(model.config, {k: v.detach().clone() for k, v in model.state_dict().items()},
                   step=step, metadata={"pretrained_source": model.config.pretrained_source,
                                        "normalization_mean": list(mean),
                                        "normalization_std": list(std)})


CHECKPOINT_FORMAT = "depfusion-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: DepressionRegressor, **extra) -> Path:
    """Write model config, weights and any training state in ``extra``.

    The file is written next to its destination and then renamed, so a crash
    never leaves a half-written checkpoint behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = ModelState.capture(model, step=extra.pop("step", 0))
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
               "model_config": state.config.to_dict(), "model_state": state.parameters,
               "step": state.step, "metadata": state.metadata, **extra}
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    config = ModelConfig(**{**payload["model_config"],
                            "head_widths": tuple(payload["model_config"]["head_widths"])})
    if expected_config is not None and (
            config.architecture() != expected_config.architecture()
            or config.input_size != expected_config.input_size):
        raise CheckpointError(
            f"{path}: model config {config.architecture()} / input {config.input_size} does not match "
            f"{expected_config.architecture()} / input {expected_config.input_size}")
    payload["model_config"] = config
    return payload


def model_from_checkpoint(payload: dict) -> DepressionRegressor:
    """Rebuild a model from a loaded checkpoint without touching pretrained files."""
    config = payload["model_config"]
    model = DepressionRegressor(replace(config, pretrained_source="random", weights_path=None))
    try:
        model.load_state_dict(payload["model_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint weights do not fit the model: {exc}") from exc
    model.config = config
    return model

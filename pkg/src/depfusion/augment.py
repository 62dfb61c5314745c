"""Training-time augmentation: horizontal flips and colour jitter only.

No rotations and no vertical flips are ever produced; the pose-dependent
stream depends on the eye-levelled geometry staying intact.  Augmentation is
applied on the fly, so the dataset is never inflated with extra images.

Jitter formulas (applied in this order, clamping to [0, 1] after each):

* brightness ``b``: ``x * b``
* contrast ``c``: ``c * x + (1 - c) * mean(gray(x))``
* saturation ``s``: ``s * x + (1 - s) * gray(x)``

with ``gray = 0.299 R + 0.587 G + 0.114 B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentPolicy:
    flip_probability: float = 0.5
    brightness_range: tuple[float, float] = (0.8, 1.2)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    saturation_range: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ParameterError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        for name in ("brightness_range", "contrast_range", "saturation_range"):
            low, high = getattr(self, name)
            if not (0.0 < low <= 1.0 <= high and math.isfinite(high)):
                raise ParameterError(f"{name} must be a positive interval containing 1.0, got {(low, high)}")


IDENTITY_POLICY = AugmentPolicy(0.0, (1.0, 1.0), (1.0, 1.0), (1.0, 1.0))


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def _gray(image: np.ndarray) -> np.ndarray:
    return image[..., :3] @ LUMA_WEIGHTS.astype(image.dtype)


def color_jitter(image: np.ndarray, brightness: float = 1.0, contrast: float = 1.0,
                 saturation: float = 1.0) -> np.ndarray:
    for name, value in (("brightness", brightness), ("contrast", contrast),
                        ("saturation", saturation)):
        if not (math.isfinite(value) and value >= 0.0):
            raise ParameterError(f"{name} factor must be finite and non-negative, got {value}")
    out = image
    if brightness != 1.0:
        out = np.clip(out * out.dtype.type(brightness), 0.0, 1.0)
    if contrast != 1.0:
        mean = _gray(out).mean()
        out = np.clip(contrast * out + (1.0 - contrast) * mean, 0.0, 1.0).astype(image.dtype)
    if saturation != 1.0:
        gray = _gray(out)[..., None]
        out = np.clip(saturation * out + (1.0 - saturation) * gray, 0.0, 1.0).astype(image.dtype)
    return out if out is not image else image.copy()


@dataclass(frozen=True)
class AugmentRecord:
    """One sampled transform: optional mirror, then colour jitter."""

    flip: bool
    brightness: float
    contrast: float
    saturation: float

    def __call__(self, image: np.ndarray) -> np.ndarray:
        out = hflip(image) if self.flip else image
        return color_jitter(out, self.brightness, self.contrast, self.saturation)


def sample_augmentation(policy: AugmentPolicy, rng: np.random.Generator) -> AugmentRecord:
    flip = bool(rng.random() < policy.flip_probability)
    factors = [float(rng.uniform(low, high)) if high > low else float(low)
               for low, high in (policy.brightness_range, policy.contrast_range,
                                 policy.saturation_range)]
    return AugmentRecord(flip, *factors)


def sample_rng(seed: int, epoch: int, position: int) -> np.random.Generator:
    """Generator for one training sample, independent of worker layout."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, position]))


def worker_rng(seed: int, worker: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, worker]))

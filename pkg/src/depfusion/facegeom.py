"""Face alignment geometry: eye-levelling rotation, bilinear resampling, crops.

Two alignment modes are produced from one detection:

* ``pose_independent``: crop the detector box directly and rescale.
* ``pose_dependent``: rotate the *whole* frame about the eye midpoint until
  the eyes are level, re-detect on the rotated frame, then crop and rescale.

Rotating before cropping matters: a crop taken first and rotated afterwards
has corners with no source texture (they would be filled from padding).
All resampling is bilinear on float images in [0, 1]; see
:mod:`depfusion.primitives` for the coordinate convention.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .detect import primary_face
from .errors import DegenerateLandmarksError, InvalidCropError, InvalidInputError
from .primitives import BoundingBox, Detection, LandmarkSet, Point

logger = logging.getLogger(__name__)

POSE_DEPENDENT = "pose_dependent"
POSE_INDEPENDENT = "pose_independent"
MODES = (POSE_DEPENDENT, POSE_INDEPENDENT)
PAD_POLICIES = ("replicate", "reflect")
DEFAULT_TARGET = 224

# samples this close to the image extent are not counted as padding
_EXTENT_EPS = 1e-6


def normalize_angle(degrees: float) -> float:
    """Map an angle in degrees into (-180, 180]."""
    if not math.isfinite(degrees):
        raise InvalidInputError(f"angle must be finite, got {degrees}")
    a = math.fmod(degrees, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def _cos_sin(degrees: float) -> tuple[float, float]:
    r = math.radians(degrees)
    c, s = math.cos(r), math.sin(r)
    # exact quarter turns
    if abs(c) < 1e-12:
        c = 0.0
    if abs(s) < 1e-12:
        s = 0.0
    return c, s


def eye_rotation_angle(landmarks: LandmarkSet) -> float:
    """Angle (degrees) of the left-eye -> right-eye vector from the +x axis.

    Rotating both eyes by the negative of this angle about their midpoint
    puts them on the same row.
    """
    dx = landmarks.right_eye.x - landmarks.left_eye.x
    dy = landmarks.right_eye.y - landmarks.left_eye.y
    if not (math.isfinite(dx) and math.isfinite(dy)):
        raise DegenerateLandmarksError("eye landmarks are not finite")
    if dx == 0.0 and dy == 0.0:
        raise DegenerateLandmarksError("left and right eye coincide")
    return normalize_angle(math.degrees(math.atan2(dy, dx)))


def rotate_point(p: Point, center: Point, angle: float) -> Point:
    """Rotate ``p`` about ``center``; positive angles turn +x toward +y."""
    c, s = _cos_sin(angle)
    dx, dy = p[0] - center[0], p[1] - center[1]
    return Point(center[0] + c * dx - s * dy, center[1] + s * dx + c * dy)


def as_float_image(image) -> np.ndarray:
    """Return ``image`` as a float H x W x C array in [0, 1]."""
    arr = np.asarray(image)
    if arr.size == 0 or arr.ndim not in (2, 3):
        raise InvalidInputError(f"expected a non-empty HxW or HxWxC image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _fold(coord: np.ndarray, extent: int, pad_policy: str) -> np.ndarray:
    if pad_policy == "reflect":
        period = 2.0 * extent
        coord = np.mod(coord, period)
        coord = np.where(coord > extent, period - coord, coord)
    elif pad_policy != "replicate":
        raise InvalidInputError(f"unknown pad policy {pad_policy!r}; expected one of {PAD_POLICIES}")
    return coord


def sample_bilinear(image: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    pad_policy: str = "replicate") -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample ``image`` at continuous plane coordinates.

    Returns the sampled values (shape ``xs.shape + (C,)``) and a boolean map of
    samples that fell outside the image extent and were filled by padding.
    """
    h, w = image.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    outside = ((xs < -_EXTENT_EPS) | (xs > w + _EXTENT_EPS)
               | (ys < -_EXTENT_EPS) | (ys > h + _EXTENT_EPS))

    u = np.clip(_fold(xs, w, pad_policy) - 0.5, 0.0, w - 1)
    v = np.clip(_fold(ys, h, pad_policy) - 0.5, 0.0, h - 1)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]

    top = image[v0, u0] * (1.0 - fu) + image[v0, u1] * fu
    bottom = image[v1, u0] * (1.0 - fu) + image[v1, u1] * fu
    out = top * (1.0 - fv) + bottom * fv
    return out, outside


def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs + 0.5, ys + 0.5


def rotate_frame(image, center: Point, angle: float,
                 pad_policy: str = "replicate") -> tuple[np.ndarray, np.ndarray]:
    """Rotate a whole frame by ``angle`` degrees about ``center``.

    Output pixel q takes the input value at ``rotate_point(q, center, -angle)``,
    so content moves by ``+angle``.  Returns ``(rotated, padded)`` where
    ``padded`` marks output pixels whose source lies outside the frame.
    """
    img = as_float_image(image)
    h, w = img.shape[:2]
    if pad_policy not in PAD_POLICIES:
        raise InvalidInputError(f"unknown pad policy {pad_policy!r}")
    if angle == 0:
        return img.copy(), np.zeros((h, w), dtype=bool)

    c, s = _cos_sin(-angle)
    qx, qy = _pixel_grid(h, w)
    dx, dy = qx - center[0], qy - center[1]
    src_x = center[0] + c * dx - s * dy
    src_y = center[1] + s * dx + c * dy
    out, padded = sample_bilinear(img, src_x, src_y, pad_policy)
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False), padded


def _crop_sample_grid(box: BoundingBox, target: int) -> tuple[np.ndarray, np.ndarray]:
    t = (np.arange(target, dtype=np.float64) + 0.5) / target
    xs = box.x_min + t * box.width
    ys = box.y_min + t * box.height
    return np.meshgrid(xs, ys)


def crop_scale(image, box: BoundingBox, target: int = DEFAULT_TARGET,
               padded: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Resample ``box`` of ``image`` to a ``target`` x ``target`` RGB crop.

    Box parts beyond the image are filled by replicate padding.  The returned
    flag is true when any output pixel draws on padding, either because the
    box leaves the frame or because it reads pixels marked in ``padded``
    (the padding map of an earlier rotation).
    """
    img = as_float_image(image)
    h, w = img.shape[:2]
    if int(target) != target or target < 8:
        raise InvalidInputError(f"target size must be an integer >= 8, got {target}")
    target = int(target)
    if not box.is_valid():
        raise InvalidCropError(f"invalid crop box {box}")
    if box.x_max <= 0 or box.y_max <= 0 or box.x_min >= w or box.y_min >= h:
        raise InvalidCropError(f"crop box {tuple(box)} lies outside the {w}x{h} image")

    xs, ys = _crop_sample_grid(box, target)
    out, outside = sample_bilinear(img, xs, ys, "replicate")
    touched = bool(outside.any())
    if padded is not None and not touched and padded.any():
        spill, _ = sample_bilinear(padded.astype(np.float32)[:, :, None], xs, ys, "replicate")
        touched = bool((spill > 0).any())

    if out.shape[2] == 1:
        out = np.repeat(out, 3, axis=2)
    out = np.clip(out[:, :, :3], 0.0, 1.0).astype(np.float32)
    return out, touched


@dataclass
class AlignedFace:
    """A fixed-size aligned crop plus the transform that produced it."""

    pixels: np.ndarray
    mode: str
    source_frame_index: int
    applied_angle: float
    crop_box: BoundingBox
    touched_padding: bool
    rotation_center: Point = field(default_factory=lambda: Point(0.0, 0.0))
    redetect_fallback: bool = False

    @property
    def target(self) -> int:
        return self.pixels.shape[0]

    def frame_to_rotated(self, p: Point) -> Point:
        return rotate_point(p, self.rotation_center, self.applied_angle)

    def frame_to_crop(self, p: Point) -> Point:
        """Map a source-frame point to crop pixel-plane coordinates."""
        q = self.frame_to_rotated(p)
        b = self.crop_box
        return Point((q.x - b.x_min) * self.target / b.width,
                     (q.y - b.y_min) * self.target / b.height)


def align_pose_independent(frame, detection: Detection, target: int = DEFAULT_TARGET,
                           frame_index: int = 0) -> AlignedFace:
    pixels, touched = crop_scale(frame, detection.box, target)
    return AlignedFace(pixels=pixels, mode=POSE_INDEPENDENT, source_frame_index=frame_index,
                       applied_angle=0.0, crop_box=detection.box, touched_padding=touched,
                       rotation_center=detection.landmarks.eye_midpoint)


def rotated_box(box: BoundingBox, center: Point, angle: float) -> BoundingBox:
    """Axis-aligned bounds of ``box`` after rotation about ``center``."""
    corners = [(box.x_min, box.y_min), (box.x_max, box.y_min),
               (box.x_max, box.y_max), (box.x_min, box.y_max)]
    return BoundingBox.around([rotate_point(Point(*c), center, angle) for c in corners])


def align_pose_dependent(frame, detection: Detection,
                         redetect: Callable[[np.ndarray], Sequence[Detection]],
                         target: int = DEFAULT_TARGET, frame_index: int = 0,
                         pad_policy: str = "replicate") -> AlignedFace:
    """Level the eyes by rotating the full frame, re-detect, then crop.

    If the re-detection finds no face, the original box is carried through
    the rotation and its bounds are cropped instead; ``redetect_fallback`` is
    set on the result.
    """
    img = as_float_image(frame)
    theta = eye_rotation_angle(detection.landmarks)
    applied = normalize_angle(-theta)
    center = detection.landmarks.eye_midpoint
    rotated, padded = rotate_frame(img, center, applied, pad_policy)

    fallback = False
    found = list(redetect(rotated))
    if found:
        box = primary_face(found).box
    else:
        fallback = True
        box = rotated_box(detection.box, center, applied)
        logger.warning("frame %d: no face after rotation, using the rotated detector box",
                       frame_index)

    pixels, touched = crop_scale(rotated, box, target, padded)
    return AlignedFace(pixels=pixels, mode=POSE_DEPENDENT, source_frame_index=frame_index,
                       applied_angle=applied, crop_box=box, touched_padding=touched,
                       rotation_center=center, redetect_fallback=fallback)


def align(frame, detection: Detection, mode: str, redetect=None,
          target: int = DEFAULT_TARGET, frame_index: int = 0,
          pad_policy: str = "replicate") -> AlignedFace:
    if mode == POSE_INDEPENDENT:
        return align_pose_independent(frame, detection, target, frame_index)
    if mode == POSE_DEPENDENT:
        if redetect is None:
            raise InvalidInputError("pose-dependent alignment needs a redetect function")
        return align_pose_dependent(frame, detection, redetect, target, frame_index, pad_policy)
    raise InvalidInputError(f"unknown alignment mode {mode!r}; expected one of {MODES}")

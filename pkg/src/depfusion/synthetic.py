"""Synthetic fiducial faces and corpora for desk-scale runs.

A synthetic face is a saturated ellipse with five anti-aliased landmark
discs painted in pure colours (see ``depfusion.detect.MARKER_COLORS``).
Backgrounds are grey (R = G = B) so they never read as face pixels.

Run ``python -m depfusion.synthetic OUT_DIR`` to write the 8-video fixture
corpus used by the end-to-end tests.
"""

from __future__ import annotations

import argparse
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .detect import MARKER_COLORS
from .facegeom import rotate_point
from .imio import write_png
from .primitives import LANDMARK_NAMES, BoundingBox, LandmarkSet, Point

_SUPERSAMPLE = 4

# canonical landmark offsets as fractions of face (width, height) from the center
_LAYOUT = {
    "left_eye": (-0.20, -0.12),
    "right_eye": (0.20, -0.12),
    "nose": (0.0, 0.05),
    "mouth_left": (-0.15, 0.22),
    "mouth_right": (0.15, 0.22),
}

SKIN_TONES = (
    (0.90, 0.60, 0.30),
    (0.70, 0.45, 0.25),
    (0.95, 0.75, 0.50),
    (0.60, 0.35, 0.20),
    (0.85, 0.55, 0.40),
    (0.75, 0.60, 0.35),
    (0.95, 0.65, 0.45),
    (0.65, 0.50, 0.30),
)


def _coverage(h: int, w: int, box: BoundingBox, inside) -> tuple[np.ndarray, tuple[slice, slice]]:
    """Fractional pixel coverage of the region ``inside(x, y)`` within ``box``."""
    c0 = max(int(math.floor(box.x_min)) - 1, 0)
    c1 = min(int(math.ceil(box.x_max)) + 1, w)
    r0 = max(int(math.floor(box.y_min)) - 1, 0)
    r1 = min(int(math.ceil(box.y_max)) + 1, h)
    if c1 <= c0 or r1 <= r0:
        return np.zeros((0, 0)), (slice(0, 0), slice(0, 0))
    sub = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE
    xs = (np.arange(c0, c1)[:, None] + sub[None, :]).ravel()
    ys = (np.arange(r0, r1)[:, None] + sub[None, :]).ravel()
    gx, gy = np.meshgrid(xs, ys)
    hit = inside(gx, gy).astype(np.float64)
    cov = hit.reshape(r1 - r0, _SUPERSAMPLE, c1 - c0, _SUPERSAMPLE).mean(axis=(1, 3))
    return cov, (slice(r0, r1), slice(c0, c1))


def _blend(image: np.ndarray, cov: np.ndarray, sl, color) -> None:
    if cov.size == 0:
        return
    color = np.asarray(color, dtype=image.dtype)
    patch = image[sl]
    patch += cov[:, :, None].astype(image.dtype) * (color - patch)


def marker_radius_for(box: BoundingBox) -> float:
    return max(2.5, 0.06 * min(box.width, box.height))


def paint_face(image: np.ndarray, box: BoundingBox, landmarks: LandmarkSet,
               skin=SKIN_TONES[0], roll: float = 0.0,
               marker_radius: float | None = None) -> BoundingBox:
    """Paint a fiducial face in place and return its visible bounding box.

    The face ellipse is inscribed in ``box`` and then turned by ``roll``
    degrees about the box center; landmarks are painted where given.
    """
    h, w = image.shape[:2]
    cx, cy = box.center
    a, b = box.width / 2, box.height / 2
    c, s = math.cos(math.radians(roll)), math.sin(math.radians(roll))

    def in_ellipse(x, y):
        dx, dy = x - cx, y - cy
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    half_w = math.sqrt((a * c) ** 2 + (b * s) ** 2)
    half_h = math.sqrt((a * s) ** 2 + (b * c) ** 2)
    visible = BoundingBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    cov, sl = _coverage(h, w, visible, in_ellipse)
    _blend(image, cov, sl, skin)

    radius = marker_radius if marker_radius is not None else marker_radius_for(box)
    for name in LANDMARK_NAMES:
        px, py = getattr(landmarks, name)
        disc = BoundingBox(px - radius, py - radius, px + radius, py + radius)
        cov, sl = _coverage(h, w, disc,
                            lambda x, y, px=px, py=py: (x - px) ** 2 + (y - py) ** 2 <= radius ** 2)
        _blend(image, cov, sl, MARKER_COLORS[name])
    return visible


@dataclass(frozen=True)
class SyntheticFace:
    center: Point
    width: float
    height: float
    roll: float = 0.0
    skin: tuple = SKIN_TONES[0]

    @property
    def upright_box(self) -> BoundingBox:
        cx, cy = self.center
        return BoundingBox(cx - self.width / 2, cy - self.height / 2,
                           cx + self.width / 2, cy + self.height / 2)

    def landmarks(self) -> LandmarkSet:
        cx, cy = self.center
        pts = [rotate_point(Point(cx + fx * self.width, cy + fy * self.height), self.center, self.roll)
               for fx, fy in (_LAYOUT[n] for n in LANDMARK_NAMES)]
        return LandmarkSet(*pts)

    def paint(self, image: np.ndarray) -> BoundingBox:
        return paint_face(image, self.upright_box, self.landmarks(), self.skin, self.roll)


def gray_texture(h: int, w: int, rng: np.random.Generator,
                 low: float = 0.25, high: float = 0.75) -> np.ndarray:
    """Smooth random grey texture, identical in all three channels."""
    noise = rng.random((h // 4 + 2, w // 4 + 2))
    field = cv2.resize(noise, (w, h), interpolation=cv2.INTER_CUBIC)
    field = np.clip(field, 0.0, 1.0) * (high - low) + low
    return np.repeat(field[:, :, None], 3, axis=2).astype(np.float32)


def render_frame(face: SyntheticFace | None, size: tuple[int, int],
                 rng: np.random.Generator) -> np.ndarray:
    h, w = size
    frame = gray_texture(h, w, rng)
    if face is not None:
        face.paint(frame)
    return frame


# video_id, subject_id, task, partition, bdi
FIXTURE_VIDEOS = (
    ("v00", "s00", "single", "training", 5),
    ("v01", "s01", "single", "training", 16),
    ("v02", "s02", "single", "training", 24),
    ("v03", "s03", "single", "training", 40),
    ("v04", "s04", "single", "development", 12),
    ("v05", "s05", "single", "development", 33),
    ("v06", "s06", "single", "test", 19),
    ("v07", "s07", "single", "test", 27),
)


def make_corpus(root, videos=FIXTURE_VIDEOS, frames_per_video: int = 12,
                size: tuple[int, int] = (128, 128), max_roll: float = 15.0,
                seed: int = 0, blank_videos=()) -> Path:
    """Write frame folders plus ``labels.csv`` under ``root``; return the labels path.

    Each video shows one identity (skin tone and face proportions fixed per
    video) moving and rolling slightly from frame to frame.  Videos listed in
    ``blank_videos`` contain background only.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    h, w = size
    for i, (video_id, *_rest) in enumerate(videos):
        width = w * (0.42 + 0.03 * (i % 4))
        height = width * (1.2 + 0.04 * (i % 3))
        skin = SKIN_TONES[i % len(SKIN_TONES)]
        for f in range(frames_per_video):
            face = None
            if video_id not in blank_videos:
                center = Point(w / 2 + rng.uniform(-4, 4), h / 2 + rng.uniform(-4, 4))
                face = SyntheticFace(center, width, height, rng.uniform(-max_roll, max_roll), skin)
            write_png(root / "frames" / video_id / f"{f:06d}.png", render_frame(face, size, rng))

    labels = root / "labels.csv"
    with labels.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["video_id", "subject_id", "task", "partition", "bdi_score"])
        out.writerows(videos)
    return labels


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write the synthetic fiducial fixture corpus.")
    parser.add_argument("out", type=Path)
    parser.add_argument("--frames", type=int, default=12)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    labels = make_corpus(args.out, frames_per_video=args.frames, size=(args.size, args.size),
                         seed=args.seed)
    print(f"corpus written under {args.out / 'frames'}; labels at {labels}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

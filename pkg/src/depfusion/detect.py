"""Face detection behind a small pluggable interface.

Two backends produce :class:`~depfusion.primitives.Detection` lists:

``synthetic_oracle``
    Reads back faces painted by :mod:`depfusion.synthetic`: a saturated
    elliptical face region carrying five pure-colour landmark discs.  It needs
    no model and is exact to sub-pixel precision, which makes the whole
    pipeline testable on generated corpora.

``pretrained_mtcnn_style``
    A pretrained CNN detector returning a box, five landmarks and a score
    (OpenCV's ``FaceDetectorYN`` with an ONNX model file at ``model_path``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DetectorBackendError, InvalidInputError, NoFaceError, ParameterError
from .primitives import LANDMARK_NAMES, BoundingBox, Detection, LandmarkSet, Point

SYNTHETIC = "synthetic_oracle"
PRETRAINED = "pretrained_mtcnn_style"
BACKENDS = (PRETRAINED, SYNTHETIC)

MARKER_COLORS = {
    "left_eye": (1.0, 0.0, 0.0),
    "right_eye": (0.0, 0.0, 1.0),
    "nose": (0.0, 1.0, 0.0),
    "mouth_left": (1.0, 0.0, 1.0),
    "mouth_right": (0.0, 1.0, 1.0),
}

# chroma (max - min channel) above which a pixel belongs to a painted face
FACE_CHROMA = 0.05
MIN_FACE_AREA = 64
MARKER_CORE_DIST = 0.25
FACE_COLOR_MIN_DIST = 0.45


@dataclass(frozen=True)
class DetectorConfig:
    backend: str = SYNTHETIC
    min_confidence: float = 0.9
    model_path: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ParameterError(f"unknown detector backend {self.backend!r}; expected one of {BACKENDS}")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ParameterError(f"min_confidence must lie in [0, 1], got {self.min_confidence}")


def primary_face(detections) -> Detection:
    """Largest box wins; ties go to higher confidence, then smaller x_min."""
    detections = list(detections)
    if not detections:
        raise NoFaceError("no face detected")
    return min(detections, key=lambda d: (-d.box.area, -d.confidence, d.box.x_min))


def _as_rgb(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.size == 0 or arr.ndim != 3 or arr.shape[2] < 3:
        raise InvalidInputError(f"expected a non-empty HxWx3 RGB image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr[:, :, :3].astype(np.float64) / 255.0
    return arr[:, :, :3].astype(np.float64)


class SyntheticFiducialDetector:
    """Decoder for the fiducial faces painted by :func:`depfusion.synthetic.paint_face`."""

    def __init__(self, min_confidence: float = 0.0):
        self.min_confidence = min_confidence
        self._colors = np.array([MARKER_COLORS[n] for n in LANDMARK_NAMES])

    def __call__(self, image) -> list[Detection]:
        img = _as_rgb(image)
        chroma = img.max(axis=2) - img.min(axis=2)
        labels, count = ndimage.label(chroma > FACE_CHROMA)
        found = []
        for index, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            component = labels[sl] == index
            if component.sum() < MIN_FACE_AREA:
                continue
            det = self._decode(img[sl], component, sl[1].start, sl[0].start)
            if det is not None and det.confidence >= self.min_confidence and det.is_valid():
                found.append(det)
        found.sort(key=lambda d: (d.box.x_min, d.box.y_min))
        return found

    def _decode(self, patch, component, x0, y0) -> Detection | None:
        dist = np.linalg.norm(patch[:, :, None, :] - self._colors[None, None], axis=3)
        far = component & (dist.min(axis=2) > FACE_COLOR_MIN_DIST)
        if not far.any():
            return None
        face_color = np.median(patch[far], axis=0)

        box = self._subpixel_box(patch, component, face_color, x0, y0)

        points = []
        for k in range(len(LANDMARK_NAMES)):
            core = component & (dist[:, :, k] < MARKER_CORE_DIST)
            if not core.any():
                return None
            core_labels, n = ndimage.label(core)
            if n > 1:
                sizes = ndimage.sum(core, core_labels, range(1, n + 1))
                core = core_labels == (int(np.argmax(sizes)) + 1)
            region = ndimage.binary_dilation(core, iterations=2) & component
            direction = self._colors[k] - face_color
            weight = (patch - face_color) @ direction / float(direction @ direction)
            weight = np.where(region, np.clip(weight, 0.0, 1.0), 0.0)
            total = weight.sum()
            if total <= 0:
                return None
            ys, xs = np.mgrid[0:patch.shape[0], 0:patch.shape[1]]
            points.append(Point(float(x0 + ((xs + 0.5) * weight).sum() / total),
                                float(y0 + ((ys + 0.5) * weight).sum() / total)))

        left_eye, right_eye, nose, mouth_a, mouth_b = points
        # image-left first, matching detector output convention
        if left_eye.x > right_eye.x:
            left_eye, right_eye = right_eye, left_eye
        if mouth_a.x > mouth_b.x:
            mouth_a, mouth_b = mouth_b, mouth_a
        return Detection(box, LandmarkSet(left_eye, right_eye, nose, mouth_a, mouth_b), 1.0)

    @staticmethod
    def _subpixel_box(patch, component, face_color, x0, y0) -> BoundingBox:
        # the outermost partially covered pixel row/column places the edge at
        # (far side of that pixel) - coverage
        face_chroma = float(face_color.max() - face_color.min())
        chroma = patch.max(axis=2) - patch.min(axis=2)
        cov = np.where(component, np.clip(chroma / face_chroma, 0.0, 1.0), 0.0)
        col_peak = cov.max(axis=0)
        row_peak = cov.max(axis=1)
        cols = np.nonzero(col_peak > 0)[0]
        rows = np.nonzero(row_peak > 0)[0]
        c0, c1, r0, r1 = cols[0], cols[-1], rows[0], rows[-1]
        return BoundingBox(float(x0 + c0 + 1 - col_peak[c0]), float(y0 + r0 + 1 - row_peak[r0]),
                           float(x0 + c1 + col_peak[c1]), float(y0 + r1 + row_peak[r1]))


class PretrainedDetector:
    """Five-point CNN face detector loaded from an ONNX file.

    Uses OpenCV's ``FaceDetectorYN``, whose output per face is a box, five
    landmarks (eyes, nose tip, mouth corners) and a confidence, the same
    contract as an MTCNN cascade.  One instance per worker.
    """

    def __init__(self, model_path, min_confidence: float = 0.9):
        if model_path is None or not Path(model_path).is_file():
            raise DetectorBackendError(f"pretrained detector model not found: {model_path}")
        import cv2

        if not hasattr(cv2, "FaceDetectorYN"):
            raise DetectorBackendError("this OpenCV build has no FaceDetectorYN")
        try:
            self._net = cv2.FaceDetectorYN.create(str(model_path), "", (320, 320),
                                                  float(min_confidence))
        except cv2.error as exc:
            raise DetectorBackendError(f"could not load detector model {model_path}: {exc}") from exc
        self.min_confidence = min_confidence

    def __call__(self, image) -> list[Detection]:
        img = _as_rgb(image)
        bgr = np.ascontiguousarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)[:, :, ::-1])
        h, w = bgr.shape[:2]
        self._net.setInputSize((w, h))
        _, faces = self._net.detect(bgr)
        found = []
        for row in [] if faces is None else faces:
            x, y, bw, bh = (float(v) for v in row[:4])
            pts = np.asarray(row[4:14], dtype=np.float64).reshape(5, 2) + 0.5
            eyes = sorted(map(tuple, pts[:2]))
            mouth = sorted(map(tuple, pts[3:5]))
            marks = LandmarkSet.from_array([eyes[0], eyes[1], pts[2], mouth[0], mouth[1]])
            det = Detection(BoundingBox(x, y, x + bw, y + bh), marks,
                            float(np.clip(row[14], 0.0, 1.0)))
            if det.confidence >= self.min_confidence and det.is_valid():
                found.append(det)
        return found


@functools.lru_cache(maxsize=8)
def make_detector(config: DetectorConfig):
    if config.backend == SYNTHETIC:
        return SyntheticFiducialDetector(config.min_confidence)
    return PretrainedDetector(config.model_path, config.min_confidence)


def detect_faces(image, config: DetectorConfig = DetectorConfig()) -> list[Detection]:
    """Run the configured backend on an RGB image."""
    return make_detector(config)(image)

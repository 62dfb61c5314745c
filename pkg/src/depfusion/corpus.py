"""Corpus indexing, frame sampling, BDI-II labels and crop extraction.

A corpus root holds one entry per video, either a folder of frame images or
a video file, optionally one directory level down (e.g. ``Northwind/``).  The
labels file is delimited text with header
``video_id,subject_id,task,partition,bdi_score``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .detect import SYNTHETIC, DetectorConfig, PretrainedDetector, make_detector, primary_face
from .errors import DepfusionError, LabelError, ManifestError
from .facegeom import MODES, POSE_DEPENDENT, align
from .imio import load_rgb, write_png

logger = logging.getLogger(__name__)

BDI_MIN, BDI_MAX = 0, 63
SEVERITY_BANDS = (
    ("minimal", 0, 13),
    ("mild", 14, 19),
    ("moderate", 20, 28),
    ("severe", 29, 63),
)
TASKS = ("northwind", "freeform", "single")
PARTITIONS = ("training", "development", "test")
LAYOUTS = ("avec2013", "avec2014", "generic")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".mpg", ".mpeg", ".wmv"}
LABEL_COLUMNS = ["video_id", "subject_id", "task", "partition", "bdi_score"]
MANIFEST_COLUMNS = LABEL_COLUMNS + ["frame_count", "source"]
REPORT_COLUMNS = ["video_id", "sampled", "processed", "no_face_skipped",
                  "padding_flagged", "redetect_fallbacks", "status"]


def check_bdi(score) -> int:
    if isinstance(score, float) and not score.is_integer():
        raise LabelError(f"BDI-II score must be an integer, got {score}")
    value = int(score)
    if not BDI_MIN <= value <= BDI_MAX:
        raise LabelError(f"BDI-II score {value} outside [{BDI_MIN}, {BDI_MAX}]")
    return value


def severity_band(score: int) -> str:
    value = check_bdi(score)
    for name, low, high in SEVERITY_BANDS:
        if low <= value <= high:
            return name
    raise AssertionError("bands cover [0, 63]")


def sample_frames(frame_count: int, stride: int) -> list[int]:
    """Indices 0, stride, 2*stride, ... below ``frame_count``."""
    if frame_count < 1 or stride < 1:
        raise ValueError(f"need frame_count >= 1 and stride >= 1, got {frame_count}, {stride}")
    return list(range(0, frame_count, stride))


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    subject_id: str
    task: str
    partition: str
    bdi_score: int
    source: Path
    frame_count: int

    @property
    def band(self) -> str:
        return severity_band(self.bdi_score)


@dataclass
class Manifest:
    corpus_name: str
    stride: int
    records: list[VideoRecord]
    layout: str = "generic"

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.video_id)

    def by_id(self) -> dict[str, VideoRecord]:
        return {r.video_id: r for r in self.records}

    def partition(self, name: str) -> list[VideoRecord]:
        return [r for r in self.records if r.partition == name]

    def sampled_indices(self, record: VideoRecord) -> list[int]:
        return sample_frames(record.frame_count, self.stride)

    def validate(self) -> None:
        ids = Counter(r.video_id for r in self.records)
        dupes = sorted(v for v, n in ids.items() if n > 1)
        if dupes:
            raise ManifestError("duplicate video ids", dupes)
        for r in self.records:
            check_bdi(r.bdi_score)
        empty = [p for p in PARTITIONS if not self.partition(p)]
        if empty:
            raise ManifestError("empty partitions", empty)
        no_frames = [r.video_id for r in self.records if r.frame_count < 1]
        if no_frames:
            raise ManifestError("videos without frames", no_frames)
        _check_tasks(self.layout, self.records)


def _check_tasks(layout: str, records) -> None:
    bad_task = [r.video_id for r in records if r.task not in TASKS]
    if bad_task:
        raise ManifestError(f"tasks must be one of {TASKS}", bad_task)
    if layout == "avec2013":
        wrong = [r.video_id for r in records if r.task != "single"]
        if wrong:
            raise ManifestError("avec2013 videos must have task 'single'", wrong)
    elif layout == "avec2014":
        wrong = [r.video_id for r in records if r.task == "single"]
        if wrong:
            raise ManifestError("avec2014 videos must be northwind or freeform", wrong)
        tasks = defaultdict(list)
        for r in records:
            tasks[r.subject_id].append(r.task)
        incomplete = sorted(s for s, t in tasks.items() if sorted(t) != ["freeform", "northwind"])
        if incomplete:
            raise ManifestError("avec2014 subjects need exactly one northwind and one freeform video",
                                incomplete)


def read_labels(labels_file) -> list[dict]:
    path = Path(labels_file)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in LABEL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"labels file {path} lacks columns", missing)
        rows = []
        for line, row in enumerate(reader, start=2):
            try:
                row["bdi_score"] = check_bdi(float(row["bdi_score"]))
            except ValueError as exc:
                raise LabelError(f"{path}:{line} ({row.get('video_id')}): {exc}") from exc
            rows.append({k: row[k] if k == "bdi_score" else row[k].strip() for k in LABEL_COLUMNS})
    return rows


def discover_sources(corpus_root) -> dict[str, Path]:
    """Map video id -> frame folder or video file, looking one level deep."""
    root = Path(corpus_root)
    if not root.is_dir():
        raise ManifestError("corpus root is not a directory", [root])
    found: dict[str, list[Path]] = defaultdict(list)

    def consider(p: Path):
        if p.is_dir() and any(c.suffix.lower() in IMAGE_SUFFIXES for c in p.iterdir()):
            found[p.name].append(p)
            return True
        if p.is_file() and p.suffix.lower() in VIDEO_SUFFIXES:
            found[p.stem].append(p)
            return True
        return False

    for child in sorted(root.iterdir()):
        if not consider(child) and child.is_dir():
            for grandchild in sorted(child.iterdir()):
                consider(grandchild)
    ambiguous = sorted(k for k, v in found.items() if len(v) > 1)
    if ambiguous:
        raise ManifestError("video ids found in more than one place", ambiguous)
    return {k: v[0] for k, v in found.items()}


def _frame_files(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def count_frames(source: Path) -> int:
    if source.is_dir():
        return len(_frame_files(source))
    cap = cv2.VideoCapture(str(source))
    try:
        if not cap.isOpened():
            raise OSError(f"cannot open video {source}")
        n = 0
        while cap.grab():
            n += 1
        return n
    finally:
        cap.release()


def read_frames(source: Path, indices) -> dict[int, np.ndarray]:
    """Load the requested frames as float32 RGB arrays in [0, 1]."""
    wanted = set(indices)
    frames = {}
    if source.is_dir():
        files = _frame_files(source)
        for i in sorted(wanted):
            frames[i] = load_rgb(files[i])
        return frames
    cap = cv2.VideoCapture(str(source))
    try:
        if not cap.isOpened():
            raise OSError(f"cannot open video {source}")
        i, last = 0, max(wanted)
        while i <= last and cap.grab():
            if i in wanted:
                ok, bgr = cap.retrieve()
                if not ok:
                    raise OSError(f"{source}: failed to decode frame {i}")
                frames[i] = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
            i += 1
    finally:
        cap.release()
    return frames




def build_manifest(corpus_root, layout: str, labels_file, stride: int = 1,
                   corpus_name: str | None = None) -> Manifest:
    if layout not in LAYOUTS:
        raise ManifestError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if stride < 1:
        raise ManifestError("stride must be a positive integer", [stride])
    labels = read_labels(labels_file)
    dupes = sorted(v for v, n in Counter(r["video_id"] for r in labels).items() if n > 1)
    if dupes:
        raise ManifestError("duplicate video ids in labels", dupes)
    sources = discover_sources(corpus_root)
    labelled = {r["video_id"] for r in labels}
    unlabelled = sorted(set(sources) - labelled)
    if unlabelled:
        raise ManifestError("videos without labels", unlabelled)
    missing = sorted(labelled - set(sources))
    if missing:
        raise ManifestError("labelled videos not found under corpus root", missing)

    records = [VideoRecord(r["video_id"], r["subject_id"], r["task"], r["partition"],
                           r["bdi_score"], sources[r["video_id"]],
                           count_frames(sources[r["video_id"]]))
               for r in labels]
    bad_partition = sorted(r.video_id for r in records if r.partition not in PARTITIONS)
    if bad_partition:
        raise ManifestError(f"partitions must be one of {PARTITIONS}", bad_partition)
    manifest = Manifest(corpus_name or Path(corpus_root).name, stride, records, layout)
    manifest.validate()
    return manifest


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# corpus_name={manifest.corpus_name}\n")
        fh.write(f"# layout={manifest.layout}\n")
        fh.write(f"# stride={manifest.stride}\n")
        out = csv.writer(fh)
        out.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            out.writerow([r.video_id, r.subject_id, r.task, r.partition, r.bdi_score,
                          r.frame_count, str(r.source)])


def read_manifest(path) -> Manifest:
    path = Path(path)
    meta = {}
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line.strip():
            body.append(line)
    records = [VideoRecord(row["video_id"], row["subject_id"], row["task"], row["partition"],
                           check_bdi(int(row["bdi_score"])), Path(row["source"]),
                           int(row["frame_count"]))
               for row in csv.DictReader(body)]
    manifest = Manifest(meta.get("corpus_name", path.stem), int(meta.get("stride", 1)),
                        records, meta.get("layout", "generic"))
    manifest.validate()
    return manifest


def crop_dir(out_root, mode: str, video_id: str) -> Path:
    return Path(out_root) / mode / video_id


def crop_path(out_root, mode: str, video_id: str, frame_index: int) -> Path:
    return crop_dir(out_root, mode, video_id) / f"{frame_index:06d}.png"


def list_crops(out_root, mode: str, video_id: str) -> list[tuple[int, Path]]:
    folder = crop_dir(out_root, mode, video_id)
    if not folder.is_dir():
        return []
    return sorted((int(p.stem), p) for p in folder.glob("*.png"))


@dataclass
class VideoCounts:
    video_id: str
    sampled: int = 0
    processed: int = 0
    no_face_skipped: int = 0
    padding_flagged: int = 0
    redetect_fallbacks: int = 0

    @property
    def status(self) -> str:
        return "ok" if self.processed > 0 else "failed"


@dataclass
class PreprocessReport:
    mode: str
    videos: list[VideoCounts] = field(default_factory=list)

    @property
    def failures(self) -> list[str]:
        return [v.video_id for v in self.videos if v.status == "failed"]

    @property
    def processed(self) -> int:
        return sum(v.processed for v in self.videos)

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(REPORT_COLUMNS)
            for v in self.videos:
                out.writerow([v.video_id, v.sampled, v.processed, v.no_face_skipped,
                              v.padding_flagged, v.redetect_fallbacks, v.status])


def _process_video(record: VideoRecord, stride: int, detector_config: DetectorConfig,
                   mode: str, target: int, out_root: Path, pad_policy: str) -> VideoCounts:
    if detector_config.backend == SYNTHETIC:
        detector = make_detector(detector_config)
    else:
        detector = PretrainedDetector(detector_config.model_path, detector_config.min_confidence)
    indices = sample_frames(record.frame_count, stride)
    counts = VideoCounts(record.video_id, sampled=len(indices))
    try:
        frames = read_frames(record.source, indices)
    except OSError as exc:
        raise DepfusionError(f"{record.video_id}: {exc}") from exc
    for index in indices:
        found = detector(frames[index])
        if not found:
            counts.no_face_skipped += 1
            continue
        try:
            face = align(frames[index], primary_face(found), mode, redetect=detector,
                         target=target, frame_index=index, pad_policy=pad_policy)
        except DepfusionError as exc:
            logger.warning("%s frame %d skipped: %s", record.video_id, index, exc)
            counts.no_face_skipped += 1
            continue
        counts.processed += 1
        counts.padding_flagged += face.touched_padding
        counts.redetect_fallbacks += face.redetect_fallback
        path = crop_path(out_root, mode, record.video_id, index)
        try:
            write_png(path, face.pixels)
        except OSError as exc:
            raise DepfusionError(f"{record.video_id}: {exc}") from exc
    if counts.processed == 0:
        logger.error("%s: no usable frames out of %d sampled", record.video_id, counts.sampled)
    return counts


def extract_and_align(manifest: Manifest, detector_config: DetectorConfig, mode: str = POSE_DEPENDENT,
                      target: int = 224, out_root=".", workers: int = 1,
                      pad_policy: str = "replicate") -> PreprocessReport:
    """Detect, align and store one crop per sampled frame of every video.

    Crops land in ``out_root/<mode>/<video_id>/<frame index:06d>.png`` and the
    per-video counts are written to ``out_root/<mode>/preprocess_report.csv``.
    Videos without a single usable frame are marked ``failed`` in the report.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out_root = Path(out_root)
    jobs = [(r, manifest.stride, detector_config, mode, target, out_root, pad_policy)
            for r in manifest.records]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda job: _process_video(*job), jobs))
    else:
        counts = [_process_video(*job) for job in jobs]
    report = PreprocessReport(mode, sorted(counts, key=lambda c: c.video_id))
    report.write(out_root / mode / "preprocess_report.csv")
    return report


def expected_frame_total(manifest: Manifest) -> int:
    return sum(math.ceil(r.frame_count / manifest.stride) for r in manifest.records)

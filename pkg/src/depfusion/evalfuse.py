"""Video scores, stream fusion, MAE/RMSE and the evaluation protocols.

A video's score is the mean of its frame scores, clipped to the BDI-II range.
The two alignment streams are fused per video with a convex weighting.  Under
the ``joint`` protocol each subject's Northwind and Freeform scores are
averaged before metrics are taken.

Per-frame scores are persisted as ``video_id,frame_index,score`` text so every
number in a report can be recomputed offline without rerunning the model.
Means use :func:`math.fsum`, which makes all reductions independent of
video order.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import Manifest, VideoRecord, list_crops
from .errors import (ConfigurationError, InvalidInputError, NoPredictionError, PairingError,
                     ProtocolError)
from .facegeom import POSE_DEPENDENT, POSE_INDEPENDENT
from .imio import load_rgb
from .net import clamp_score, load_checkpoint, model_from_checkpoint, to_batch

FUSED = "fused"
PROTOCOLS = ("separated", "joint", "single")
FRAME_SCORE_COLUMNS = ["video_id", "frame_index", "score"]
PREDICTION_COLUMNS = ["video_id", "task", "stream", "score"]


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def video_score(frame_scores) -> float:
    scores = [float(s) for s in frame_scores]
    if not scores:
        raise NoPredictionError("no frame scores to average")
    return clamp_score(_mean(scores))


def _paired(preds, labels) -> tuple[list[float], list[float]]:
    preds = [float(p) for p in preds]
    labels = [float(y) for y in labels]
    if len(preds) != len(labels):
        raise InvalidInputError(f"{len(preds)} predictions vs {len(labels)} labels")
    if not preds:
        raise InvalidInputError("metrics need at least one prediction")
    return preds, labels


def mae(preds, labels) -> float:
    preds, labels = _paired(preds, labels)
    return _mean(abs(p - y) for p, y in zip(preds, labels))


def rmse(preds, labels) -> float:
    preds, labels = _paired(preds, labels)
    return math.sqrt(_mean((p - y) ** 2 for p, y in zip(preds, labels)))


def error_distribution(preds, labels) -> list[float]:
    """Absolute errors sorted from smallest to largest."""
    preds, labels = _paired(preds, labels)
    return sorted(abs(p - y) for p, y in zip(preds, labels))


@dataclass
class StreamPrediction:
    video_id: str
    stream: str
    frame_scores: list[float]
    frame_indices: list[int] = field(default_factory=list)
    task: str = "single"

    @property
    def score(self) -> float:
        return video_score(self.frame_scores)


@dataclass(frozen=True)
class FusionWeights:
    w_independent: float = 0.5
    w_dependent: float = 0.5

    def __post_init__(self):
        if self.w_independent < 0 or self.w_dependent < 0:
            raise InvalidInputError(f"fusion weights must be non-negative, got {self}")
        if not math.isclose(self.w_independent + self.w_dependent, 1.0, abs_tol=1e-12):
            raise InvalidInputError(f"fusion weights must sum to 1, got {self}")

    @classmethod
    def parse(cls, text: str) -> "FusionWeights":
        """Parse ``"a,b"`` (pose-independent weight first)."""
        try:
            a, b = (float(v) for v in text.split(","))
        except ValueError as exc:
            raise InvalidInputError(f"weights must look like 'a,b', got {text!r}") from exc
        return cls(a, b)


def fuse_streams(a: StreamPrediction, b: StreamPrediction,
                 weights: FusionWeights = FusionWeights()) -> float:
    if a.video_id != b.video_id:
        raise PairingError(f"cannot fuse {a.video_id} with {b.video_id}")
    if a.stream == b.stream:
        raise PairingError(f"{a.video_id}: both predictions come from stream {a.stream}")
    if a.stream == POSE_DEPENDENT or b.stream == POSE_INDEPENDENT:
        a, b = b, a
    return clamp_score(weights.w_independent * a.score + weights.w_dependent * b.score)


def joint_task_scores(scores: dict[str, float], records) -> dict[str, float]:
    """Average each subject's Northwind and Freeform video scores."""
    by_subject = defaultdict(dict)
    for r in records:
        if r.video_id in scores:
            by_subject[r.subject_id][r.task] = scores[r.video_id]
    bad = sorted(s for s, tasks in by_subject.items() if sorted(tasks) != ["freeform", "northwind"])
    if bad:
        raise ProtocolError(f"subjects without both northwind and freeform predictions: {', '.join(bad)}")
    return {s: (t["northwind"] + t["freeform"]) / 2.0 for s, t in by_subject.items()}


@dataclass
class EvalReport:
    protocol: str
    count: int
    metrics: dict[str, dict[str, float]]
    errors: list[float]
    weights: dict[str, float]
    partition: str = "test"
    units: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def _unit_scores(scores: dict[str, float], records: list[VideoRecord], protocol: str):
    """Collapse video scores to the protocol's evaluation units -> (ids, preds, labels)."""
    labels = {r.video_id: r.bdi_score for r in records}
    if protocol == "joint":
        subject_scores = joint_task_scores(scores, records)
        subject_labels = joint_task_scores(labels, records)
        ids = sorted(subject_scores)
        return ids, [subject_scores[i] for i in ids], [subject_labels[i] for i in ids]
    ids = sorted(scores)
    return ids, [scores[i] for i in ids], [float(labels[i]) for i in ids]


def evaluate_predictions(independent: list[StreamPrediction], dependent: list[StreamPrediction],
                         records: list[VideoRecord], weights: FusionWeights = FusionWeights(),
                         protocol: str = "separated", partition: str = "test") -> EvalReport:
    """Per-stream and fused metrics for one protocol from in-memory predictions."""
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    ind = {p.video_id: p for p in independent}
    dep = {p.video_id: p for p in dependent}
    wanted = {r.video_id for r in records}
    missing = sorted(wanted - set(ind)) + sorted(wanted - set(dep))
    if missing:
        raise NoPredictionError(f"videos without predictions: {', '.join(sorted(set(missing)))}")

    streams = {
        POSE_INDEPENDENT: {v: ind[v].score for v in wanted},
        POSE_DEPENDENT: {v: dep[v].score for v in wanted},
        FUSED: {v: fuse_streams(ind[v], dep[v], weights) for v in wanted},
    }
    metrics, errors, units = {}, [], []
    for name, scores in streams.items():
        units, preds, labels = _unit_scores(scores, records, protocol)
        metrics[name] = {"mae": mae(preds, labels), "rmse": rmse(preds, labels)}
        if name == FUSED:
            errors = error_distribution(preds, labels)
    return EvalReport(protocol, len(units), metrics, errors, asdict(weights), partition, units)


# -- persisted scores --------------------------------------------------------

def write_frame_scores(path, predictions: list[StreamPrediction]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(FRAME_SCORE_COLUMNS)
        for p in sorted(predictions, key=lambda p: p.video_id):
            for index, score in zip(p.frame_indices, p.frame_scores):
                out.writerow([p.video_id, index, repr(float(score))])


def read_frame_scores(path, stream: str, records=()) -> list[StreamPrediction]:
    tasks = {r.video_id: r.task for r in records}
    grouped = defaultdict(lambda: ([], []))
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            indices, scores = grouped[row["video_id"]]
            indices.append(int(row["frame_index"]))
            scores.append(float(row["score"]))
    return [StreamPrediction(v, stream, s, i, tasks.get(v, "single"))
            for v, (i, s) in sorted(grouped.items())]


def write_video_predictions(path, rows) -> None:
    """Write ``(video_id, task, stream, score)`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PREDICTION_COLUMNS)
        for video_id, task, stream, score in sorted(rows, key=lambda r: (r[0], r[2])):
            out.writerow([video_id, task, stream, repr(float(score))])


def stream_rows(predictions: list[StreamPrediction]):
    return [(p.video_id, p.task, p.stream, p.score) for p in predictions]


def fused_rows(independent, dependent, weights: FusionWeights):
    dep = {p.video_id: p for p in dependent}
    return [(p.video_id, p.task, FUSED, fuse_streams(p, dep[p.video_id], weights))
            for p in independent if p.video_id in dep]


# -- inference ---------------------------------------------------------------

@torch.no_grad()
def predict_videos(model, records, crops_root, stream: str,
                   batch_size: int = 32) -> list[StreamPrediction]:
    """Score every stored crop of ``records`` with ``model`` in evaluation mode."""
    model.eval()
    out = []
    for r in sorted(records, key=lambda r: r.video_id):
        crops = list_crops(crops_root, stream, r.video_id)
        if not crops:
            raise NoPredictionError(f"{r.video_id}: no {stream} crops under {crops_root}")
        indices, scores = [], []
        for start in range(0, len(crops), batch_size):
            chunk = crops[start:start + batch_size]
            batch = to_batch([load_rgb(p) for _, p in chunk])
            scores.extend(float(s) for s in model(batch))
            indices.extend(i for i, _ in chunk)
        out.append(StreamPrediction(r.video_id, stream, scores, indices, r.task))
    return out


def predict_stream(checkpoint, records, crops_root, stream: str,
                   batch_size: int = 32) -> list[StreamPrediction]:
    model = model_from_checkpoint(load_checkpoint(checkpoint))
    return predict_videos(model, records, crops_root, stream, batch_size)


def frame_scores_path(out_dir, stream: str, partition: str = "test") -> Path:
    return Path(out_dir) / f"{stream}_{partition}_frames.csv"


def evaluate(manifest: Manifest, checkpoints: dict, crops_root, out_dir,
             weights: FusionWeights = FusionWeights(), protocol: str = "separated",
             partition: str = "test", batch_size: int = 32) -> EvalReport:
    """Run both streams on ``partition``, persist their frame scores, report metrics.

    Metrics are computed from the persisted score files, so the report is
    exactly what :func:`evaluate_from_files` reproduces offline.
    """
    for stream in (POSE_INDEPENDENT, POSE_DEPENDENT):
        ckpt = checkpoints.get(stream)
        if ckpt is None or not Path(ckpt).is_file():
            raise ConfigurationError(f"missing {stream} checkpoint: {ckpt}")
    records = manifest.partition(partition)
    for stream in (POSE_INDEPENDENT, POSE_DEPENDENT):
        preds = predict_stream(checkpoints[stream], records, crops_root, stream, batch_size)
        write_frame_scores(frame_scores_path(out_dir, stream, partition), preds)
    return evaluate_from_files(manifest, out_dir, weights, protocol, partition)


def evaluate_from_files(manifest: Manifest, out_dir, weights: FusionWeights = FusionWeights(),
                        protocol: str = "separated", partition: str = "test") -> EvalReport:
    records = manifest.partition(partition)
    loaded = {}
    for stream in (POSE_INDEPENDENT, POSE_DEPENDENT):
        path = frame_scores_path(out_dir, stream, partition)
        if not path.is_file():
            raise ConfigurationError(f"missing frame scores for {stream}: {path}")
        loaded[stream] = read_frame_scores(path, stream, records)
    return evaluate_predictions(loaded[POSE_INDEPENDENT], loaded[POSE_DEPENDENT], records,
                                weights, protocol, partition)


def write_error_distribution(report: EvalReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["rank", "abs_error"])
        for rank, err in enumerate(report.errors, start=1):
            out.writerow([rank, repr(err)])


def plot_error_distribution(report: EvalReport, path) -> bool:
    """Bar chart of sorted absolute errors; returns False if matplotlib is missing."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.bar(np.arange(1, len(report.errors) + 1), report.errors, width=0.9)
    ax.set_xlabel("video (sorted by error)" if report.protocol != "joint" else "subject (sorted by error)")
    ax.set_ylabel("absolute error (BDI-II)")
    fused = report.metrics[FUSED]
    ax.set_title(f"fused {report.protocol}: MAE {fused['mae']:.2f}, RMSE {fused['rmse']:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True

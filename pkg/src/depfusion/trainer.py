"""Per-stream training: frame-level L1 regression with RAdam + Lookahead.

Every frame is supervised with its video's BDI-II score.  Each epoch walks
the training frames in a seeded shuffled order, evaluates video-level MAE on
the development partition without augmentation, steps the plateau scheduler
on that MAE and checkpoints.  ``best.pt`` links to the epoch with the lowest
development MAE (earliest on ties).

Shuffling and augmentation draws depend only on ``(seed, epoch, position)``,
so an interrupted run resumed from its checkpoint replays the same batches.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentPolicy, sample_augmentation, sample_rng
from .corpus import Manifest, list_crops, read_manifest
from .errors import CheckpointError, ConfigurationError, InvalidInputError
from .evalfuse import mae, predict_videos, rmse
from .facegeom import MODES
from .imio import load_rgb
from .net import (ModelConfig, build_model, load_checkpoint, model_from_checkpoint,
                  save_checkpoint, to_batch)
from .optim import DEFAULT_LR, Lookahead, PlateauScheduler, RAdam

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "dev_mae", "dev_rmse", "lr", "wall_clock_s"]
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class TrainConfig:
    stream: str
    manifest_path: str
    crops_root: str
    checkpoint_dir: str
    batch_size: int = 32
    max_epochs: int = 30
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    lr: float = DEFAULT_LR
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6
    plateau_threshold: float = 1e-4
    init_bias_from_labels: bool = True
    cache_crops: bool = True

    def __post_init__(self):
        if self.stream not in MODES:
            raise ConfigurationError(f"unknown stream {self.stream!r}; expected one of {MODES}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_mae: float
    dev_rmse: float
    lr: float
    wall_clock_s: float


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    log: list[EpochLog]


def l1_loss(predictions: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between frame predictions and labels."""
    if predictions.shape != labels.shape or predictions.numel() == 0:
        raise InvalidInputError(
            f"l1_loss needs equal non-empty shapes, got {tuple(predictions.shape)} and {tuple(labels.shape)}")
    return (predictions - labels).abs().mean()


class FrameSet:
    """Training frames of one stream with their video labels."""

    def __init__(self, manifest: Manifest, crops_root, stream: str, partition: str,
                 cache: bool = True):
        self.paths: list[Path] = []
        self.labels: list[float] = []
        self.video_ids: list[str] = []
        for r in manifest.partition(partition):
            for _, path in list_crops(crops_root, stream, r.video_id):
                self.paths.append(path)
                self.labels.append(float(r.bdi_score))
                self.video_ids.append(r.video_id)
        self._cache: dict[int, np.ndarray] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.paths)

    def check_readable(self, input_size: int) -> None:
        bad = []
        for i, path in enumerate(self.paths):
            try:
                if self._cache is not None:
                    self._cache[i] = load_rgb(path)
                else:
                    with path.open("rb") as fh:
                        if fh.read(8) != PNG_SIGNATURE:
                            raise OSError("not a PNG file")
            except OSError:
                bad.append(str(path))
        if bad:
            raise ConfigurationError(f"unreadable crops: {', '.join(bad[:5])}"
                                     + (f" (+{len(bad) - 5} more)" if len(bad) > 5 else ""))
        shape = self.image(0).shape
        if shape != (input_size, input_size, 3):
            raise ConfigurationError(f"crops are {shape[:2]}, model expects {input_size}x{input_size}")

    def image(self, i: int) -> np.ndarray:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        return load_rgb(self.paths[i])


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xF00D])).permutation(n)


def _make_optimizers(model, config: TrainConfig):
    names = [n for n, _ in model.named_parameters()]
    inner = RAdam(model.parameters(), lr=config.lr, betas=config.betas, eps=config.eps, names=names)
    optimizer = Lookahead(inner, k=config.lookahead_k, alpha=config.lookahead_alpha)
    scheduler = PlateauScheduler(optimizer, config.plateau_factor, config.plateau_patience,
                                 config.min_lr, config.plateau_threshold)
    return optimizer, scheduler


def train_one_epoch(model, optimizer, frames: FrameSet, config: TrainConfig, epoch: int) -> float:
    model.train()
    order = epoch_order(len(frames), config.seed, epoch)
    total, count = [], 0
    for start in range(0, len(order), config.batch_size):
        positions = range(start, min(start + config.batch_size, len(order)))
        images = []
        for pos in positions:
            aug = sample_augmentation(config.augment, sample_rng(config.seed, epoch, pos))
            images.append(aug(frames.image(int(order[pos]))))
        batch = to_batch(images)
        labels = torch.tensor([frames.labels[int(order[p])] for p in positions], dtype=batch.dtype)
        optimizer.zero_grad()
        loss = l1_loss(model(batch), labels)
        loss.backward()
        optimizer.step()
        total.append(loss.item() * len(positions))
        count += len(positions)
    return math.fsum(total) / count


def evaluate_dev(model, manifest: Manifest, config: TrainConfig) -> tuple[float, float]:
    preds = predict_videos(model, manifest.partition("development"), config.crops_root,
                           config.stream, config.batch_size)
    labels = {r.video_id: r.bdi_score for r in manifest.records}
    scores = [p.score for p in preds]
    truth = [labels[p.video_id] for p in preds]
    return mae(scores, truth), rmse(scores, truth)


def _write_log(path: Path, log: list[EpochLog]) -> None:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(LOG_COLUMNS)
        for e in log:
            out.writerow([e.epoch, repr(e.train_loss), repr(e.dev_mae), repr(e.dev_rmse),
                          repr(e.lr), f"{e.wall_clock_s:.3f}"])


def _point_best(ckpt_dir: Path, target: Path) -> None:
    link = ckpt_dir / "best.pt"
    if link.is_symlink() or link.exists():
        link.unlink()
    link.symlink_to(target.name)


def _prepare(config: TrainConfig):
    manifest = read_manifest(config.manifest_path)
    frames = FrameSet(manifest, config.crops_root, config.stream, "training", config.cache_crops)
    if len(frames) == 0:
        raise ConfigurationError(
            f"no {config.stream} training crops under {config.crops_root}; run preprocess first")
    frames.check_readable(config.model.input_size)
    for r in manifest.partition("development"):
        if not list_crops(config.crops_root, config.stream, r.video_id):
            raise ConfigurationError(f"development video {r.video_id} has no {config.stream} crops")
    return manifest, frames


def _run_epochs(model, optimizer, scheduler, manifest, frames, config: TrainConfig,
                start_epoch: int, log: list[EpochLog], best: tuple[float, int]) -> TrainResult:
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_mae, best_epoch = best
    last_path = None
    for epoch in range(start_epoch, config.max_epochs):
        t0 = time.perf_counter()
        train_loss = train_one_epoch(model, optimizer, frames, config, epoch)
        dev_mae, dev_rmse = evaluate_dev(model, manifest, config)
        lr = scheduler.step(dev_mae)
        log.append(EpochLog(epoch + 1, train_loss, dev_mae, dev_rmse, lr, time.perf_counter() - t0))
        logger.info("%s epoch %d: train L1 %.4f, dev MAE %.4f, RMSE %.4f, lr %.2e",
                    config.stream, epoch + 1, train_loss, dev_mae, dev_rmse, lr)

        improved = dev_mae < best_mae
        if improved:
            best_mae, best_epoch = dev_mae, epoch + 1
        path = ckpt_dir / f"epoch_{epoch + 1:03d}.pt"
        save_checkpoint(path, model, step=optimizer.step_count, epoch=epoch + 1,
                        optimizer_state=optimizer.state_dict(),
                        scheduler_state=scheduler.state_dict(),
                        best_dev_mae=best_mae, best_epoch=best_epoch,
                        train_config=config.to_dict(), log=[asdict(e) for e in log])
        if improved:
            _point_best(ckpt_dir, path)
        if last_path is not None and last_path.name != f"epoch_{best_epoch:03d}.pt":
            last_path.unlink(missing_ok=True)
        last_path = path
        _write_log(ckpt_dir / "train_log.csv", log)

    # drop stale epoch files from earlier runs, keeping best and last
    keep = {f"epoch_{best_epoch:03d}.pt", last_path.name if last_path else ""}
    for stale in ckpt_dir.glob("epoch_*.pt"):
        if stale.name not in keep:
            stale.unlink()
    last = last_path if last_path else ckpt_dir / f"epoch_{start_epoch:03d}.pt"
    return TrainResult(ckpt_dir / "best.pt", last, log)


def train_stream(config: TrainConfig) -> TrainResult:
    manifest, frames = _prepare(config)
    model_config = config.model
    if config.init_bias_from_labels:
        model_config = replace(model_config, output_bias=float(np.mean(frames.labels)))
    model = build_model(model_config, seed=config.seed)
    optimizer, scheduler = _make_optimizers(model, config)
    return _run_epochs(model, optimizer, scheduler, manifest, frames, config, 0, [],
                       (math.inf, 0))


def resume(checkpoint, config: TrainConfig) -> TrainResult:
    """Continue training from ``checkpoint`` up to ``config.max_epochs``."""
    payload = load_checkpoint(checkpoint, expected_config=config.model)
    for key in ("epoch", "optimizer_state", "scheduler_state"):
        if key not in payload:
            raise CheckpointError(f"{checkpoint} holds no training state ({key} missing)")
    manifest, frames = _prepare(config)
    model = model_from_checkpoint(payload)
    optimizer, scheduler = _make_optimizers(model, config)
    optimizer.load_state_dict(payload["optimizer_state"])
    scheduler.load_state_dict(payload["scheduler_state"])
    log = [EpochLog(**e) for e in payload.get("log", [])]
    return _run_epochs(model, optimizer, scheduler, manifest, frames, config, payload["epoch"],
                       log, (payload["best_dev_mae"], payload["best_epoch"]))


def read_train_log(path) -> list[EpochLog]:
    with Path(path).open(newline="") as fh:
        return [EpochLog(int(r["epoch"]), float(r["train_loss"]), float(r["dev_mae"]),
                         float(r["dev_rmse"]), float(r["lr"]), float(r["wall_clock_s"]))
                for r in csv.DictReader(fh)]

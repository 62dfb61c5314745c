"""Command-line driver: ``depfusion <command> --config FILE [flags]``.

Commands: preprocess, train, predict, fuse, evaluate, report.
Exit status is 0 on success, 1 on a pipeline failure and 2 on bad usage.
Each run writes ``run_<command>.json`` (config hash, seed, library
versions) into the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .corpus import build_manifest, extract_and_align, read_manifest, write_manifest
from .errors import ConfigurationError, DepfusionError
from .evalfuse import (EvalReport, FusionWeights, evaluate, fused_rows, frame_scores_path,
                       plot_error_distribution, predict_stream, read_frame_scores, stream_rows,
                       write_error_distribution, write_frame_scores, write_video_predictions)
from .facegeom import MODES, POSE_DEPENDENT, POSE_INDEPENDENT
from .trainer import resume, train_stream

logger = logging.getLogger("depfusion")

COMMANDS = ("preprocess", "train", "predict", "fuse", "evaluate", "report")


def _weights_arg(text: str) -> tuple[float, float]:
    try:
        w = FusionWeights.parse(text)
    except DepfusionError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return (w.w_independent, w.w_dependent)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value configuration file")
    common.add_argument("--mode", choices=MODES, help="alignment stream (default: both)")
    common.add_argument("--stride", type=int, help="keep one frame in every STRIDE")
    common.add_argument("--protocol", choices=("separated", "joint", "single"))
    common.add_argument("--weights", type=_weights_arg, metavar="A,B",
                        help="fusion weights, pose-independent first")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="depfusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"depfusion {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("preprocess", parents=[common], help="detect, align and crop faces")
    train = sub.add_parser("train", parents=[common], help="train one or both streams")
    train.add_argument("--resume", type=Path, help="checkpoint to continue from")
    predict = sub.add_parser("predict", parents=[common], help="score a partition with trained models")
    predict.add_argument("--partition", choices=("training", "development", "test"))
    fuse = sub.add_parser("fuse", parents=[common], help="fuse stream predictions per video")
    fuse.add_argument("--partition", choices=("training", "development", "test"))
    sub.add_parser("evaluate", parents=[common], help="metrics for both streams and the fusion")
    sub.add_parser("report", parents=[common], help="write the sorted error distribution")
    return parser


def _streams(args) -> tuple[str, ...]:
    return (args.mode,) if args.mode else (POSE_INDEPENDENT, POSE_DEPENDENT)


def _write_header(cfg: PipelineConfig, command: str, argv) -> None:
    import cv2
    import numpy
    import torch
    import torchvision

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "command": command, "argv": list(argv), "config_sha256": cfg.digest(), "seed": cfg.seed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": {"depfusion": __version__, "python": platform.python_version(),
                     "numpy": numpy.__version__, "torch": torch.__version__,
                     "torchvision": torchvision.__version__, "opencv": cv2.__version__},
        "config": cfg.to_dict(),
    }
    (cfg.out_dir / f"run_{command}.json").write_text(json.dumps(header, indent=2) + "\n")


def cmd_preprocess(cfg: PipelineConfig, args) -> int:
    manifest = build_manifest(cfg.corpus_root, cfg.layout, cfg.labels_file, cfg.stride,
                              cfg.corpus_name or None)
    write_manifest(manifest, cfg.manifest_path)
    failed = []
    for stream in _streams(args):
        report = extract_and_align(manifest, cfg.detector_config(), stream, cfg.target_size,
                                   cfg.crops_root, cfg.workers, cfg.pad_policy)
        print(f"{stream}: {report.processed} crops from {len(report.videos)} videos")
        failed += [f"{stream}/{v}" for v in report.failures]
    if failed:
        print(f"error: videos without usable frames: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    streams = _streams(args)
    if args.resume and len(streams) != 1:
        raise ConfigurationError("--resume needs --mode")
    for stream in streams:
        tc = cfg.train_config(stream)
        result = resume(args.resume, tc) if args.resume else train_stream(tc)
        best = min(result.log, key=lambda e: e.dev_mae)
        print(f"{stream}: {len(result.log)} epochs, best dev MAE {best.dev_mae:.4f} "
              f"at epoch {best.epoch} -> {result.best_checkpoint}")
    return 0


def _partition(cfg, args) -> str:
    return getattr(args, "partition", None) or cfg.partition


def cmd_predict(cfg: PipelineConfig, args) -> int:
    manifest = read_manifest(cfg.manifest_path)
    partition = _partition(cfg, args)
    records = manifest.partition(partition)
    for stream in _streams(args):
        ckpt = cfg.checkpoint(stream)
        if not ckpt.is_file():
            raise ConfigurationError(f"missing {stream} checkpoint: {ckpt}")
        preds = predict_stream(ckpt, records, cfg.crops_root, stream, cfg.batch_size)
        write_frame_scores(frame_scores_path(cfg.predictions_dir, stream, partition), preds)
        write_video_predictions(cfg.predictions_dir / f"{stream}_{partition}_videos.csv",
                                stream_rows(preds))
        print(f"{stream}: scored {len(preds)} {partition} videos")
    return 0


def cmd_fuse(cfg: PipelineConfig, args) -> int:
    manifest = read_manifest(cfg.manifest_path)
    partition = _partition(cfg, args)
    records = manifest.partition(partition)
    loaded = {}
    for stream in (POSE_INDEPENDENT, POSE_DEPENDENT):
        path = frame_scores_path(cfg.predictions_dir, stream, partition)
        if not path.is_file():
            raise ConfigurationError(f"missing {stream} predictions {path}; run predict first")
        loaded[stream] = read_frame_scores(path, stream, records)
    rows = fused_rows(loaded[POSE_INDEPENDENT], loaded[POSE_DEPENDENT], cfg.weights())
    out = cfg.predictions_dir / f"fused_{partition}_videos.csv"
    write_video_predictions(out, rows)
    print(f"fused {len(rows)} videos -> {out}")
    return 0


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    manifest = read_manifest(cfg.manifest_path)
    checkpoints = {s: cfg.checkpoint(s) for s in (POSE_INDEPENDENT, POSE_DEPENDENT)}
    report = evaluate(manifest, checkpoints, cfg.crops_root, cfg.eval_dir, cfg.weights(),
                      cfg.protocol, cfg.partition, cfg.batch_size)
    report.write(cfg.eval_dir / "report.json")
    for name, m in report.metrics.items():
        print(f"{name:>17}: MAE {m['mae']:.4f}  RMSE {m['rmse']:.4f}")
    return 0


def cmd_report(cfg: PipelineConfig, args) -> int:
    path = cfg.eval_dir / "report.json"
    if not path.is_file():
        raise ConfigurationError(f"no evaluation report at {path}; run evaluate first")
    report = EvalReport.read(path)
    write_error_distribution(report, cfg.eval_dir / "error_distribution.csv")
    plotted = plot_error_distribution(report, cfg.eval_dir / "error_distribution.png")
    print(f"{report.count} {report.protocol} errors written to {cfg.eval_dir}"
          + ("" if plotted else " (matplotlib unavailable, no plot)"))
    return 0


HANDLERS = {"preprocess": cmd_preprocess, "train": cmd_train, "predict": cmd_predict,
            "fuse": cmd_fuse, "evaluate": cmd_evaluate, "report": cmd_report}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"stride": args.stride, "protocol": args.protocol, "out": args.out,
                 "seed": args.seed, "fusion_weights": args.weights}
    try:
        cfg = load_config(args.config, overrides)
        _write_header(cfg, args.command, argv)
        return HANDLERS[args.command](cfg, args)
    except (DepfusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

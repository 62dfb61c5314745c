from pathlib import Path
from types import SimpleNamespace

import pytest

from depfusion.corpus import build_manifest, extract_and_align, write_manifest
from depfusion.detect import DetectorConfig
from depfusion.facegeom import MODES
from depfusion.net import ModelConfig
from depfusion.synthetic import make_corpus
from depfusion.trainer import TrainConfig

CROP_SIZE = 32

# filled by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The 8-video x 12-frame synthetic corpus, preprocessed for both streams."""
    root = tmp_path_factory.mktemp("corpus")
    labels = make_corpus(root)
    manifest = build_manifest(root / "frames", "generic", labels)
    manifest_path = root / "manifest.csv"
    write_manifest(manifest, manifest_path)
    crops = root / "crops"
    reports = {mode: extract_and_align(manifest, DetectorConfig(), mode, CROP_SIZE, crops)
               for mode in MODES}
    return SimpleNamespace(root=root, labels=labels, manifest=manifest,
                           manifest_path=manifest_path, crops=crops, reports=reports)


@pytest.fixture
def train_config(fixture_corpus, tmp_path):
    """Factory for tiny-backbone training configs on the fixture corpus."""

    def make(stream="pose_dependent", out="ckpt", **kw):
        kw.setdefault("batch_size", 8)
        kw.setdefault("max_epochs", 2)
        kw.setdefault("lr", 3e-3)
        kw.setdefault("crops_root", str(fixture_corpus.crops))
        kw.setdefault("model", ModelConfig("tiny_test_backbone", "random", input_size=CROP_SIZE))
        return TrainConfig(stream=stream, manifest_path=str(fixture_corpus.manifest_path),
                           checkpoint_dir=str(Path(tmp_path) / out), **kw)

    return make

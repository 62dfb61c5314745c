import csv
import math

import cv2
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depfusion.corpus import (REPORT_COLUMNS, Manifest, VideoRecord, build_manifest, check_bdi,
                              expected_frame_total, extract_and_align, list_crops, read_manifest,
                              sample_frames, severity_band, write_manifest)
from depfusion.detect import DetectorConfig
from depfusion.errors import LabelError, ManifestError
from depfusion.imio import load_rgb
from depfusion.synthetic import FIXTURE_VIDEOS, make_corpus


def write_labels(path, rows):
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["video_id", "subject_id", "task", "partition", "bdi_score"])
        out.writerows(rows)
    return path


def frame_dirs(root, ids, frames=2):
    for vid in ids:
        d = root / vid
        d.mkdir(parents=True)
        for i in range(frames):
            cv2.imwrite(str(d / f"{i:06d}.png"), np.zeros((8, 8, 3), np.uint8))
    return root


class TestSeverityBand:
    @pytest.mark.parametrize("score, band", [(0, "minimal"), (13, "minimal"), (14, "mild"),
                                             (19, "mild"), (20, "moderate"), (28, "moderate"),
                                             (29, "severe"), (63, "severe")])
    def test_boundaries(self, score, band):
        assert severity_band(score) == band

    @pytest.mark.parametrize("score", [-1, 64, 12.5])
    def test_out_of_range(self, score):
        with pytest.raises(LabelError):
            severity_band(score)

    def test_total_and_monotone(self):
        order = ["minimal", "mild", "moderate", "severe"]
        ranks = [order.index(severity_band(s)) for s in range(64)]
        assert ranks == sorted(ranks)


class TestSampleFrames:
    def test_keep_all(self):
        assert sample_frames(10, 1) == list(range(10))

    def test_stride_nine(self):
        idx = sample_frames(100, 9)
        assert len(idx) == 12 and idx[:3] == [0, 9, 18]

    def test_single_frame(self):
        assert sample_frames(1, 9) == [0]

    def test_length_formula_exhaustive(self):
        # every count up to 10^4 for a spread of strides, plus every stride
        # for a spread of counts
        for stride in (9, 10, 64, 1000, 9999, 10000):
            for count in range(1, 10001):
                assert len(sample_frames(count, stride)) == math.ceil(count / stride)
        for stride in (1, 2, 3):
            for count in range(1, 2001):
                assert len(sample_frames(count, stride)) == math.ceil(count / stride)
        for count in (1, 2, 99, 100, 5003, 10000):
            for stride in range(1, 10001):
                assert len(sample_frames(count, stride)) == -(-count // stride)

    @given(st.integers(1, 10_000), st.integers(1, 10_000))
    def test_increasing_in_range(self, count, stride):
        idx = sample_frames(count, stride)
        assert idx[0] == 0 and idx[-1] < count
        assert all(b - a == stride for a, b in zip(idx, idx[1:]))


class TestBuildManifest:
    def test_synthetic_fixture(self, tmp_path):
        labels = make_corpus(tmp_path, frames_per_video=2, size=(48, 48))
        m = build_manifest(tmp_path / "frames", "generic", labels, stride=1)
        assert len(m.records) == 8
        assert [r.video_id for r in m.records] == [v[0] for v in FIXTURE_VIDEOS]
        assert all(r.frame_count == 2 for r in m.records)
        assert {r.band for r in m.partition("training")} == {"minimal", "mild", "moderate", "severe"}

    def test_score_out_of_range(self, tmp_path):
        frame_dirs(tmp_path / "c", ["a"])
        labels = write_labels(tmp_path / "l.csv", [("a", "s", "single", "training", 64)])
        with pytest.raises(LabelError):
            build_manifest(tmp_path / "c", "generic", labels)

    def test_avec2014_missing_task(self, tmp_path):
        ids = ["s1_n", "s1_f", "s2_n", "d1_n", "d1_f", "t1_n", "t1_f"]
        frame_dirs(tmp_path / "c", ids)
        rows = [("s1_n", "s1", "northwind", "training", 3), ("s1_f", "s1", "freeform", "training", 3),
                ("s2_n", "s2", "northwind", "training", 9),
                ("d1_n", "d1", "northwind", "development", 1), ("d1_f", "d1", "freeform", "development", 1),
                ("t1_n", "t1", "northwind", "test", 5), ("t1_f", "t1", "freeform", "test", 5)]
        labels = write_labels(tmp_path / "l.csv", rows)
        with pytest.raises(ManifestError, match="s2"):
            build_manifest(tmp_path / "c", "avec2014", labels)
        ok = write_labels(tmp_path / "ok.csv", rows[:2] + rows[3:])
        (tmp_path / "c" / "s2_n" / "000000.png").unlink()
        (tmp_path / "c" / "s2_n" / "000001.png").unlink()
        (tmp_path / "c" / "s2_n").rmdir()
        assert len(build_manifest(tmp_path / "c", "avec2014", ok).records) == 6

    def test_avec2013_requires_single(self, tmp_path):
        frame_dirs(tmp_path / "c", ["a", "b", "c"])
        labels = write_labels(tmp_path / "l.csv", [("a", "s", "northwind", "training", 1),
                                                   ("b", "t", "single", "development", 2),
                                                   ("c", "u", "single", "test", 3)])
        with pytest.raises(ManifestError, match="a"):
            build_manifest(tmp_path / "c", "avec2013", labels)

    def test_unlabelled_video_named(self, tmp_path):
        frame_dirs(tmp_path / "c", ["a", "b", "c", "stray"])
        labels = write_labels(tmp_path / "l.csv", [("a", "s", "single", "training", 1),
                                                   ("b", "t", "single", "development", 2),
                                                   ("c", "u", "single", "test", 3)])
        with pytest.raises(ManifestError, match="stray"):
            build_manifest(tmp_path / "c", "generic", labels)

    def test_duplicate_and_empty_partition(self, tmp_path):
        frame_dirs(tmp_path / "c", ["a", "b"])
        dup = write_labels(tmp_path / "d.csv", [("a", "s", "single", "training", 1),
                                                ("a", "s", "single", "test", 1),
                                                ("b", "t", "single", "development", 2)])
        with pytest.raises(ManifestError, match="a"):
            build_manifest(tmp_path / "c", "generic", dup)
        empty = write_labels(tmp_path / "e.csv", [("a", "s", "single", "training", 1),
                                                  ("b", "t", "single", "development", 2)])
        with pytest.raises(ManifestError, match="test"):
            build_manifest(tmp_path / "c", "generic", empty)

    def test_video_file_source(self, tmp_path):
        root = tmp_path / "c"
        frame_dirs(root, ["a", "b"])
        writer = cv2.VideoWriter(str(root / "v.avi"), cv2.VideoWriter_fourcc(*"MJPG"), 5, (16, 16))
        for i in range(7):
            writer.write(np.full((16, 16, 3), i * 30, np.uint8))
        writer.release()
        labels = write_labels(tmp_path / "l.csv", [("a", "s", "single", "training", 1),
                                                   ("b", "t", "single", "development", 2),
                                                   ("v", "u", "single", "test", 3)])
        m = build_manifest(root, "generic", labels, stride=3)
        assert m.by_id()["v"].frame_count == 7
        assert m.sampled_indices(m.by_id()["v"]) == [0, 3, 6]

    def test_round_trip(self, tmp_path):
        labels = make_corpus(tmp_path, frames_per_video=3, size=(48, 48))
        m = build_manifest(tmp_path / "frames", "generic", labels, stride=2, corpus_name="fx")
        write_manifest(m, tmp_path / "m.csv")
        again = read_manifest(tmp_path / "m.csv")
        assert again == m
        assert expected_frame_total(again) == 16


class TestExtractAndAlign:
    def test_fixture_counts(self, fixture_corpus):
        for report in fixture_corpus.reports.values():
            assert report.processed == 96
            assert report.failures == []
            for v in report.videos:
                assert v.processed + v.no_face_skipped == v.sampled == 12
                assert v.padding_flagged == 0

    def test_layout_and_report(self, fixture_corpus):
        crops = list_crops(fixture_corpus.crops, "pose_dependent", "v03")
        assert [i for i, _ in crops] == list(range(12))
        assert crops[5][1].name == "000005.png"
        assert load_rgb(crops[5][1]).shape == (32, 32, 3)
        with (fixture_corpus.crops / "pose_dependent" / "preprocess_report.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == REPORT_COLUMNS
        assert [r[0] for r in rows[1:]] == sorted(v[0] for v in FIXTURE_VIDEOS)

    def test_blank_video_fails(self, tmp_path):
        labels = make_corpus(tmp_path, frames_per_video=4, size=(64, 64), blank_videos=("v02",))
        m = build_manifest(tmp_path / "frames", "generic", labels)
        report = extract_and_align(m, DetectorConfig(), "pose_independent", 16, tmp_path / "crops")
        counts = {v.video_id: v for v in report.videos}
        assert counts["v02"].no_face_skipped == 4 and counts["v02"].status == "failed"
        assert report.failures == ["v02"]

    def test_deterministic_and_idempotent(self, tmp_path):
        labels = make_corpus(tmp_path, frames_per_video=3, size=(64, 64))
        m = build_manifest(tmp_path / "frames", "generic", labels, stride=2)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        extract_and_align(m, DetectorConfig(), "pose_dependent", 24, out_a)
        first = {p.relative_to(out_a): p.read_bytes() for p in out_a.rglob("*.png")}
        extract_and_align(m, DetectorConfig(), "pose_dependent", 24, out_a)
        extract_and_align(m, DetectorConfig(), "pose_dependent", 24, out_b, workers=3)
        assert len(first) == 16
        for out in (out_a, out_b):
            assert {p.relative_to(out): p.read_bytes() for p in out.rglob("*.png")} == first


class TestVideoRecord:
    def test_manifest_sorted(self, tmp_path):
        recs = [VideoRecord(v, v, "single", p, 1, tmp_path, 1)
                for v, p in (("b", "test"), ("a", "training"), ("c", "development"))]
        assert [r.video_id for r in Manifest("x", 1, recs).records] == ["a", "b", "c"]

    def test_check_bdi(self):
        assert check_bdi(12.0) == 12

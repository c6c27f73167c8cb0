"""Experiment assembly helpers: stream views, sampling, proposal plumbing."""

import dataclasses

import numpy as np
import pytest

from talkit.core import DataError, FeatureSequence, Interval, ReprSpec
from talkit.detector import CascadeConfig, FusionMode
from talkit.features import SynthConfig, generate_synthetic
from talkit.net import TrainConfig, TwoLayerNet
from talkit.pipeline import (
    SampleConfig,
    _map_videos,
    build_training_set,
    det_views,
    generate_proposals,
    jittered_proposals,
    load_streams,
    run_detection,
    tpg_view,
    train_stage,
    worker_count,
)

SPEC = ReprSpec.parse("kpart:1")


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_ds")
    cfg = SynthConfig(num_videos=6, units_per_video=60, actions_per_video=2, seed=3)
    manifest = generate_synthetic(cfg, root)
    return manifest, load_streams(manifest)


def binary_bias_net(n_f: int, b2=None) -> TwoLayerNet:
    biases = np.zeros(6) if b2 is None else np.array(b2, dtype=float)
    return TwoLayerNet(np.zeros((n_f, 2)), np.zeros(2), np.zeros((2, 6)), biases)


class TestWorkerCount:
    def test_default_is_serial(self, monkeypatch):
        monkeypatch.delenv("TALKIT_THREADS", raising=False)
        assert worker_count() == 1

    def test_env_raises_cap(self, monkeypatch):
        monkeypatch.setenv("TALKIT_THREADS", "4")
        assert worker_count() == 4

    def test_garbage_and_zero_fall_back(self, monkeypatch):
        monkeypatch.setenv("TALKIT_THREADS", "zero")
        assert worker_count() == 1
        monkeypatch.setenv("TALKIT_THREADS", "0")
        assert worker_count() == 1

    def test_map_preserves_order_when_threaded(self, monkeypatch):
        monkeypatch.setenv("TALKIT_THREADS", "3")
        got = _map_videos(lambda v: v * 2, list(range(20)))
        assert got == [v * 2 for v in range(20)]


class TestViews:
    def test_tpg_view_fuses_both_streams(self, small_dataset):
        _, streams = small_dataset
        view = tpg_view(next(iter(streams.values())))
        assert view.dim == 16  # 8 + 8

    def test_tpg_view_passes_single_stream(self):
        seq = FeatureSequence("v", np.ones((4, 5)))
        assert tpg_view({"rgb": seq}) is seq

    def test_det_views_per_mode(self, small_dataset):
        _, streams = small_dataset
        per_video = next(iter(streams.values()))
        assert [n for n, _ in det_views(per_video, FusionMode.RGB)] == ["rgb"]
        assert [n for n, _ in det_views(per_video, FusionMode.FLOW)] == ["flow"]
        early = det_views(per_video, FusionMode.EARLY)
        assert [n for n, _ in early] == ["early"] and early[0][1].dim == 16
        assert [n for n, _ in det_views(per_video, FusionMode.LATE)] == ["rgb", "flow"]

    def test_missing_stream_rejected(self):
        seq = FeatureSequence("v", np.ones((4, 5)))
        with pytest.raises(DataError, match="flow"):
            det_views({"rgb": seq}, FusionMode.LATE)


class TestBuildTrainingSet:
    def test_binary_collapses_classes(self, small_dataset):
        manifest, streams = small_dataset
        sets = build_training_set(manifest, streams, SPEC, binary=True)
        assert set(sets) == {"tpg"}
        ts = sets["tpg"]
        assert set(np.unique(ts.classes)) <= {0, 1}
        assert ts.positives > 0 and ts.positives < ts.size

    def test_multiclass_keeps_labels(self, small_dataset):
        manifest, streams = small_dataset
        sets = build_training_set(manifest, streams, SPEC, fusion=FusionMode.EARLY)
        assert set(sets) == {"early"}
        ts = sets["early"]
        assert ts.x.shape == (ts.size, SPEC.block_count * 16)
        assert 0 < ts.classes.max() <= manifest.class_count

    def test_background_rows_have_zero_offsets(self, small_dataset):
        manifest, streams = small_dataset
        ts = build_training_set(manifest, streams, SPEC, binary=True)["tpg"]
        np.testing.assert_array_equal(ts.offsets[ts.classes == 0], 0.0)

    def test_negatives_roughly_balanced(self, small_dataset):
        manifest, streams = small_dataset
        cfg = SampleConfig(bg_ratio=1.0, min_bg=4)
        ts = build_training_set(manifest, streams, SPEC, cfg, binary=True)["tpg"]
        negatives = ts.size - ts.positives
        assert negatives <= ts.positives + 4 * len(manifest.videos)

    def test_deterministic(self, small_dataset):
        manifest, streams = small_dataset
        a = build_training_set(manifest, streams, SPEC, binary=True)["tpg"]
        b = build_training_set(manifest, streams, SPEC, binary=True)["tpg"]
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.classes, b.classes)
        np.testing.assert_array_equal(a.offsets, b.offsets)

    def test_late_fusion_yields_stream_pair_with_shared_labels(self, small_dataset):
        manifest, streams = small_dataset
        sets = build_training_set(manifest, streams, SPEC, fusion=FusionMode.LATE)
        assert set(sets) == {"rgb", "flow"}
        np.testing.assert_array_equal(sets["rgb"].classes, sets["flow"].classes)
        assert sets["rgb"].x.shape == sets["flow"].x.shape
        assert not np.array_equal(sets["rgb"].x, sets["flow"].x)  # independent noise

    def test_train_stage_seeds_streams_differently(self, small_dataset):
        manifest, streams = small_dataset
        sets = build_training_set(manifest, streams, SPEC, fusion=FusionMode.LATE)
        cfg = TrainConfig(batch_size=16, learning_rate=0.0, iterations=1, lr_decay_at=())
        nets, curves = train_stage(sets, manifest.class_count, cfg, hidden=8)
        assert set(nets) == {"rgb", "flow"}
        # lr 0 leaves the seeded init visible: per-stream seeds must differ
        assert not np.array_equal(nets["rgb"].w1, nets["flow"].w1)
        assert set(curves) == {"rgb", "flow"}


class TestGenerateProposals:
    def test_structure_and_budget(self, small_dataset):
        manifest, streams = small_dataset
        net = binary_bias_net(SPEC.block_count * 16)
        got = generate_proposals(streams, net, SPEC, an=5.0, nms_threshold=0.9)
        assert set(got) == {v.video_id for v in manifest.videos}
        total = sum(len(v) for v in got.values())
        assert total == round(5.0 * 6)
        for vid, plist in got.items():
            assert all(p.video_id == vid for p in plist)
            scores = [p.score for p in plist]
            assert scores == sorted(scores, reverse=True)

    def test_threaded_run_matches_serial(self, small_dataset, monkeypatch):
        manifest, streams = small_dataset
        net = binary_bias_net(SPEC.block_count * 16, [0.0, 0, 0, 1.0, 0.5, -0.5])
        monkeypatch.delenv("TALKIT_THREADS", raising=False)
        serial = generate_proposals(streams, net, SPEC, an=8.0)
        monkeypatch.setenv("TALKIT_THREADS", "4")
        threaded = generate_proposals(streams, net, SPEC, an=8.0)
        assert serial == threaded


class TestJitteredProposals:
    def test_each_boundary_moves_by_exact_amount(self, small_dataset):
        manifest, _ = small_dataset
        got = jittered_proposals(manifest, amount=2.0, seed=0)
        pairs = 0
        for ann in manifest.annotations:
            candidates = got[ann.video_id]
            match = [
                p for p in candidates
                if abs(abs(p.interval.start - ann.interval.start) - 2.0) < 1e-9
                or p.interval.start == 0.0
            ]
            assert match
            pairs += 1
        assert pairs == len(manifest.annotations)

    def test_counts_and_scores(self, small_dataset):
        manifest, _ = small_dataset
        got = jittered_proposals(manifest, amount=2.0, seed=0)
        assert sum(len(v) for v in got.values()) == len(manifest.annotations)
        assert all(p.score == 1.0 for v in got.values() for p in v)

    def test_displacements_never_fractional(self, small_dataset):
        manifest, _ = small_dataset
        got = jittered_proposals(manifest, amount=3.0, seed=5)
        flat = [p for v in got.values() for p in v]
        anns = sorted(manifest.annotations,
                      key=lambda a: (a.video_id, a.interval.start, a.interval.end, a.class_id))
        grouped: dict[str, list] = {}
        for a in anns:
            grouped.setdefault(a.video_id, []).append(a)
        for vid, plist in got.items():
            for p, a in zip(plist, grouped[vid]):
                ds = p.interval.start - a.interval.start
                de = p.interval.end - a.interval.end
                duration = manifest.video(vid).duration
                assert abs(ds) == 3.0 or p.interval.start == 0.0
                assert abs(de) == 3.0 or p.interval.end == duration

    def test_seed_controls_draws(self, small_dataset):
        manifest, _ = small_dataset
        a = jittered_proposals(manifest, amount=2.0, seed=0)
        b = jittered_proposals(manifest, amount=2.0, seed=0)
        c = jittered_proposals(manifest, amount=2.0, seed=1)
        assert a == b
        assert a != c


class TestRunDetection:
    def test_missing_stream_net_rejected(self, small_dataset):
        manifest, streams = small_dataset
        props = jittered_proposals(manifest, amount=1.0, seed=0)
        with pytest.raises(DataError, match="early"):
            run_detection(streams, {}, props, SPEC, CascadeConfig(), FusionMode.EARLY)

    def test_empty_proposals_yield_no_detections(self, small_dataset):
        manifest, streams = small_dataset
        net = TwoLayerNet(
            np.zeros((SPEC.block_count * 16, 2)), np.zeros(2),
            np.zeros((2, (manifest.class_count + 1) * 3)),
            np.zeros((manifest.class_count + 1) * 3),
        )
        got = run_detection(streams, {"early": net}, {}, SPEC)
        assert got == []

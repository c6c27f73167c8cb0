"""Window sweep, actionness scoring, AN selection, and NMS."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from talkit.core import DataError, Detection, FeatureSequence, Interval, Proposal, ReprSpec
from talkit.net import TwoLayerNet, init_net
from talkit.proposals import (
    WindowConfig,
    load_proposals,
    nms,
    save_proposals,
    score_proposals,
    select_by_an,
    slide_windows,
    tiou_fast,
)

SPEC = ReprSpec.parse("kpart:1")


def binary_net_with_bias(b2: list[float], n_f: int = 9) -> TwoLayerNet:
    """Zero-weight binary head whose outputs are exactly the six biases."""
    return TwoLayerNet(np.zeros((n_f, 2)), np.zeros(2), np.zeros((2, 6)), np.array(b2, dtype=float))


class TestSlideWindows:
    def test_hand_enumeration(self):
        got = slide_windows(4.0, WindowConfig(lengths=(2,), stride_fraction=0.5))
        assert got == [Interval(0, 2), Interval(1, 3), Interval(2, 4)]

    def test_short_video_falls_back_to_full_span(self):
        got = slide_windows(1.0, WindowConfig(lengths=(2,), stride_fraction=0.5))
        assert got == [Interval(0, 1)]

    def test_multi_scale_counts(self):
        got = slide_windows(8.0, WindowConfig(lengths=(1, 2, 4, 8, 16, 32)))
        by_len = {}
        for iv in got:
            by_len[iv.length] = by_len.get(iv.length, 0) + 1
        assert by_len == {1.0: 15, 2.0: 7, 4.0: 3, 8.0: 1}

    def test_full_stride_tiles_without_overlap(self):
        got = slide_windows(6.0, WindowConfig(lengths=(2,), stride_fraction=1.0))
        assert got == [Interval(0, 2), Interval(2, 4), Interval(4, 6)]

    def test_output_sorted_and_unique(self):
        got = slide_windows(40.0, WindowConfig(lengths=(1, 2, 4, 8)))
        keys = [(iv.start, iv.end) for iv in got]
        assert keys == sorted(keys)
        assert len(keys) == len(set(keys))

    def test_all_windows_inside_video(self):
        for iv in slide_windows(13.0, WindowConfig(lengths=(2, 4, 8))):
            assert iv.start >= 0.0 and iv.end <= 13.0

    def test_count_grows_linearly_with_duration(self):
        cfg = WindowConfig(lengths=(1, 2, 4, 8, 16, 32))
        n1 = len(slide_windows(1000.0, cfg))
        n2 = len(slide_windows(2000.0, cfg))
        assert abs(n2 - 2 * n1) <= 0.02 * n2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            WindowConfig(lengths=())
        with pytest.raises(ValueError):
            WindowConfig(lengths=(4, 2))
        with pytest.raises(ValueError):
            WindowConfig(lengths=(2,), stride_fraction=0.0)
        with pytest.raises(ValueError):
            WindowConfig(lengths=(2,), stride_fraction=1.5)
        with pytest.raises(ValueError):
            slide_windows(0.0)

    @given(st.floats(2.0, 300.0))
    @settings(max_examples=40)
    def test_never_empty(self, duration):
        assert slide_windows(duration, WindowConfig(lengths=(4, 8))) != []


class TestScoreProposals:
    def make_seq(self, n=10, d=3, seed=0):
        rng = np.random.default_rng(seed)
        return FeatureSequence("v", rng.normal(size=(n, d)))

    def test_zero_net_keeps_windows_and_scores_half(self):
        seq = self.make_seq()
        windows = [Interval(0, 2), Interval(4, 8)]
        got = score_proposals(binary_net_with_bias([0.0] * 6), seq, windows, SPEC, "v")
        assert [p.interval for p in got] == windows
        assert all(p.score == pytest.approx(0.5) for p in got)
        assert all(p.video_id == "v" for p in got)

    def test_bias_offsets_shift_boundaries(self):
        seq = self.make_seq()
        net = binary_net_with_bias([0.0, 0.0, 0.0, 2.0, 1.0, -1.0])
        got = score_proposals(net, seq, [Interval(2, 6)], SPEC)
        assert got[0].interval == Interval(3, 5)
        assert got[0].score == pytest.approx(np.exp(2) / (1 + np.exp(2)))

    def test_collapsing_refinement_keeps_original(self):
        seq = self.make_seq()
        net = binary_net_with_bias([0.0, 0.0, 0.0, 0.0, 5.0, -5.0])
        got = score_proposals(net, seq, [Interval(2, 6)], SPEC)
        assert got[0].interval == Interval(2, 6)

    def test_refinement_clamps_to_video(self):
        seq = self.make_seq(n=10)
        net = binary_net_with_bias([0.0, 0.0, 0.0, 0.0, -3.0, 100.0])
        got = score_proposals(net, seq, [Interval(1, 2)], SPEC)
        assert got[0].interval == Interval(0, 10)

    def test_refine_flag_disables_shift(self):
        seq = self.make_seq()
        net = binary_net_with_bias([0.0, 0.0, 0.0, 2.0, 1.0, -1.0])
        got = score_proposals(net, seq, [Interval(2, 6)], SPEC, refine=False)
        assert got[0].interval == Interval(2, 6)

    def test_sorted_by_descending_score(self):
        seq = self.make_seq(n=40, seed=3)
        net = init_net(SPEC.block_count * 3, 1, hidden=8, seed=1)
        windows = slide_windows(40.0, WindowConfig(lengths=(2, 4, 8)))
        got = score_proposals(net, seq, windows, SPEC)
        scores = [p.score for p in got]
        assert scores == sorted(scores, reverse=True)
        assert all(0.0 <= s <= 1.0 for s in scores)

    def test_rejects_multiclass_head(self):
        net = init_net(SPEC.block_count * 3, 4, hidden=8, seed=0)
        with pytest.raises(DataError, match="binary"):
            score_proposals(net, self.make_seq(), [Interval(0, 4)], SPEC)


def make_pool(seed: int, count: int, videos: int = 3) -> list[Proposal]:
    rng = np.random.default_rng(seed)
    pool = []
    for i in range(count):
        start = float(rng.uniform(0, 90))
        pool.append(Proposal(
            interval=Interval(start, start + float(rng.uniform(1, 10))),
            score=float(rng.uniform(0, 1)),
            video_id=f"v{int(rng.integers(videos))}",
        ))
    return pool


class TestSelectByAn:
    def test_matches_sort_and_cut_oracle(self):
        pool = make_pool(0, 100, videos=4)
        got = select_by_an(pool, an=5.0, num_videos=4)
        want = sorted(pool, key=lambda p: (-p.score, p.video_id, p.interval.start,
                                           p.interval.end))[:20]
        assert got == want

    def test_budget_rounds(self):
        pool = make_pool(1, 50)
        assert len(select_by_an(pool, an=2.5, num_videos=3)) == 8  # round(7.5)

    def test_identity_when_budget_covers_pool(self):
        pool = make_pool(2, 10)
        got = select_by_an(pool, an=10.0, num_videos=1)
        assert sorted(got, key=id) != []  # non-empty sanity
        assert set(map(id, got)) == set(map(id, pool))

    def test_warns_when_pool_is_short(self):
        pool = make_pool(3, 5)
        with pytest.warns(UserWarning, match="only 5"):
            got = select_by_an(pool, an=100.0, num_videos=2)
        assert len(got) == 5

    def test_smaller_an_is_prefix_of_larger(self):
        pool = make_pool(4, 200, videos=5)
        small = select_by_an(pool, an=4.0, num_videos=5)
        large = select_by_an(pool, an=20.0, num_videos=5)
        assert large[: len(small)] == small

    def test_equivalent_to_score_threshold(self):
        pool = make_pool(5, 300, videos=5)
        got = select_by_an(pool, an=10.0, num_videos=5)
        cut = min(p.score for p in got)
        assert sum(p.score > cut for p in pool) <= len(got)
        assert all(p.score >= cut for p in got)

    def test_mean_per_video_near_an(self):
        pool = make_pool(6, 400, videos=4)
        got = select_by_an(pool, an=30.0, num_videos=4)
        assert abs(len(got) / 4 - 30.0) <= 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            select_by_an([], an=0.0, num_videos=3)
        with pytest.raises(ValueError):
            select_by_an([], an=5.0, num_videos=0)


def nms_oracle(items, threshold, class_wise=False):
    """Independent quadratic greedy reference."""
    order = sorted(items, key=lambda d: (-d.score, d.video_id, d.interval.start,
                                         d.interval.end))
    kept = []
    for cand in order:
        suppressed = False
        for k in kept:
            same_class = (not class_wise) or getattr(k, "class_id", 0) == getattr(
                cand, "class_id", 0)
            if same_class and k.video_id == cand.video_id:
                inter = min(k.interval.end, cand.interval.end) - max(
                    k.interval.start, cand.interval.start)
                if inter > 0:
                    union = k.interval.length + cand.interval.length - inter
                    if inter / union >= threshold:
                        suppressed = True
                        break
        if not suppressed:
            kept.append(cand)
    return kept


class TestNms:
    def test_identical_intervals_keep_higher_score(self):
        a = Proposal(Interval(0, 4), 0.9, "v")
        b = Proposal(Interval(0, 4), 0.4, "v")
        assert nms([b, a], threshold=0.5) == [a]

    def test_disjoint_all_kept(self):
        items = [Proposal(Interval(4 * i, 4 * i + 2), 0.5, "v") for i in range(5)]
        assert len(nms(items, threshold=0.5)) == 5

    def test_drops_at_exact_threshold(self):
        # tIoU([0,2), [1,3)) = 1/3
        a = Proposal(Interval(0, 2), 0.9, "v")
        b = Proposal(Interval(1, 3), 0.8, "v")
        assert nms([a, b], threshold=1 / 3) == [a]
        assert nms([a, b], threshold=0.34) == [a, b]

    def test_videos_do_not_suppress_each_other(self):
        a = Proposal(Interval(0, 4), 0.9, "v1")
        b = Proposal(Interval(0, 4), 0.8, "v2")
        assert len(nms([a, b], threshold=0.5)) == 2

    def test_class_wise_keeps_other_classes(self):
        a = Detection(Interval(0, 4), class_id=1, score=0.9, video_id="v")
        b = Detection(Interval(0, 4), class_id=2, score=0.8, video_id="v")
        assert len(nms([a, b], threshold=0.5, class_wise=True)) == 2
        assert len(nms([a, b], threshold=0.5, class_wise=False)) == 1

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            nms([], threshold=0.0)
        with pytest.raises(ValueError):
            nms([], threshold=1.0)

    @pytest.mark.parametrize("threshold", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_quadratic_oracle_on_proposals(self, seed, threshold):
        pool = make_pool(seed, 50, videos=2)
        assert nms(pool, threshold=threshold) == nms_oracle(pool, threshold)

    @pytest.mark.parametrize("seed", [3, 4])
    def test_matches_quadratic_oracle_on_detections(self, seed):
        rng = np.random.default_rng(seed)
        pool = []
        for _ in range(40):
            start = float(rng.uniform(0, 50))
            pool.append(Detection(
                interval=Interval(start, start + float(rng.uniform(1, 8))),
                class_id=int(rng.integers(1, 4)),
                score=float(rng.uniform(0, 1)),
                video_id=f"v{int(rng.integers(2))}",
            ))
        got = nms(pool, threshold=0.4, class_wise=True)
        assert got == nms_oracle(pool, 0.4, class_wise=True)

    def test_monotone_in_threshold(self):
        pool = make_pool(9, 60, videos=2)
        sizes = [len(nms(pool, threshold=t)) for t in (0.3, 0.5, 0.7, 0.9)]
        assert sizes == sorted(sizes)

    def test_tiou_fast_agrees_with_reference(self):
        from talkit.core import tiou

        rng = np.random.default_rng(0)
        for _ in range(200):
            s1, s2 = rng.uniform(0, 20, 2)
            a = Interval(float(s1), float(s1) + float(rng.uniform(0.5, 6)))
            b = Interval(float(s2), float(s2) + float(rng.uniform(0.5, 6)))
            assert tiou_fast(a, b) == pytest.approx(tiou(a, b), abs=1e-12)


class TestProposalFiles:
    def test_round_trip(self, tmp_path):
        pool = make_pool(0, 20)
        path = tmp_path / "props.jsonl"
        save_proposals(path, pool)
        assert load_proposals(path) == pool

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_proposals(tmp_path / "nope.jsonl")

    def test_bad_line_reports_number(self, tmp_path):
        path = tmp_path / "props.jsonl"
        save_proposals(path, make_pool(1, 2))
        path.write_text(path.read_text() + "{bad\n")
        with pytest.raises(DataError, match=":3"):
            load_proposals(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "props.jsonl"
        path.write_text('{"video_id": "v", "start": 0.0, "end": 2.0}\n')
        with pytest.raises(DataError, match=":1"):
            load_proposals(path)

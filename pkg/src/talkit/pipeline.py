"""Experiment assembly: dataset loading, training-set construction, stage
training, and the proposal-to-detection-to-report chain.

Everything here is deterministic given the configs' seeds.  Videos are always
visited in sorted id order so that per-video random draws never depend on
filesystem ordering.  ``TALKIT_THREADS`` caps worker threads for the
per-video scoring and detection loops (default 1).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from talkit.core import (
    DataError,
    Detection,
    FeatureSequence,
    Interval,
    Proposal,
    ReprSpec,
)
from talkit.detector import CascadeConfig, FusionMode, Stream, detect_video, fuse_early
from talkit.evaluate import DEFAULT_THRESHOLDS, EvalReport, map_at
from talkit.features import DatasetManifest, load_features
from talkit.net import TrainConfig, TwoLayerNet, assign_label, init_net, train
from talkit.proposals import WindowConfig, nms, score_proposals, select_by_an, slide_windows
from talkit.reprs import extract


def worker_count() -> int:
    """Worker cap from TALKIT_THREADS; 1 (serial) unless raised explicitly."""
    try:
        return max(1, int(os.environ.get("TALKIT_THREADS", "1")))
    except ValueError:
        return 1


def _map_videos(fn, video_ids):
    workers = worker_count()
    if workers == 1:
        return [fn(v) for v in video_ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, video_ids))


def load_streams(manifest: DatasetManifest) -> dict[str, dict[str, FeatureSequence]]:
    """Read every video's per-stream features: {video_id: {stream: sequence}}."""
    out: dict[str, dict[str, FeatureSequence]] = {}
    for entry in manifest.videos:
        streams = {}
        for name, rel in (("rgb", entry.rgb), ("flow", entry.flow)):
            if rel:
                streams[name] = load_features(
                    manifest.root / rel, video_id=entry.video_id
                )
        if not streams:
            raise DataError(f"video {entry.video_id!r} lists no feature files")
        out[entry.video_id] = streams
    return out


def tpg_view(streams: dict[str, FeatureSequence]) -> FeatureSequence:
    """Proposal-stage input: the concatenated streams when both exist.

    Keeping one proposal net regardless of the detector's fusion mode means
    every fusion ablation sees identical proposals.
    """
    if "rgb" in streams and "flow" in streams:
        return fuse_early(streams["rgb"], streams["flow"])
    return next(iter(streams.values()))


def det_views(streams: dict[str, FeatureSequence], fusion: FusionMode) -> list[tuple[str, FeatureSequence]]:
    """Detector-stage inputs as (net key, sequence) pairs for a fusion mode."""
    def need(name: str) -> FeatureSequence:
        if name not in streams:
            raise DataError(f"fusion mode {fusion} needs a {name!r} stream")
        return streams[name]

    if fusion is FusionMode.RGB:
        return [("rgb", need("rgb"))]
    if fusion is FusionMode.FLOW:
        return [("flow", need("flow"))]
    if fusion is FusionMode.EARLY:
        return [("early", fuse_early(need("rgb"), need("flow")))]
    return [("rgb", need("rgb")), ("flow", need("flow"))]


@dataclass(frozen=True)
class SampleConfig:
    """How training clips are drawn from a labeled dataset.

    Sliding windows provide most samples; each ground-truth interval also
    contributes itself plus ``gt_copies`` jittered variants so the regressor
    sees boundaries in need of correction.  Background windows are subsampled
    to roughly ``bg_ratio`` negatives per positive.
    """

    pos_tiou: float = 0.5
    bg_tiou: float = 0.3
    gt_copies: int = 2
    max_jitter: float = 2.0
    bg_ratio: float = 1.0
    min_bg: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bg_tiou <= self.pos_tiou <= 1.0:
            raise ValueError("need 0 <= bg_tiou <= pos_tiou <= 1")
        if self.gt_copies < 0 or self.min_bg < 0:
            raise ValueError("counts must be non-negative")
        if self.max_jitter < 0 or self.bg_ratio < 0:
            raise ValueError("max_jitter and bg_ratio must be non-negative")


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Feature matrix with class ids and offset targets, one row per clip."""

    x: np.ndarray        # (n, n_f)
    classes: np.ndarray  # (n,)
    offsets: np.ndarray  # (n, 2)

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def positives(self) -> int:
        return int(np.count_nonzero(self.classes))


def _jitter_interval(rng, interval: Interval, amount: float, duration: float) -> Interval | None:
    lo = interval.start + rng.uniform(-amount, amount)
    hi = interval.end + rng.uniform(-amount, amount)
    lo, hi = max(lo, 0.0), min(hi, duration)
    if hi - lo < 0.5:
        return None
    return Interval(lo, hi)


def build_training_set(
    manifest: DatasetManifest,
    streams: dict[str, dict[str, FeatureSequence]],
    spec: ReprSpec,
    cfg: SampleConfig = SampleConfig(),
    window_cfg: WindowConfig = WindowConfig(),
    fusion: FusionMode = FusionMode.EARLY,
    binary: bool = False,
) -> dict[str, TrainingSet]:
    """Label candidate clips and extract their features, per detector stream.

    With ``binary`` every action class collapses to 1 (the proposal stage's
    action/background task) and the sets are keyed ``"tpg"``; otherwise one
    set per fusion-mode stream, keyed like ``det_views``.
    """
    rng = np.random.default_rng(cfg.seed)
    rows: dict[str, list[np.ndarray]] = {}
    classes: list[int] = []
    offsets: list[tuple[float, float]] = []
    for video_id in sorted(streams):
        anns = manifest.annotations_for(video_id)
        views = (
            [("tpg", tpg_view(streams[video_id]))]
            if binary
            else det_views(streams[video_id], fusion)
        )
        duration = float(views[0][1].num_units)
        candidates = list(slide_windows(duration, window_cfg))
        for a in anns:
            candidates.append(a.interval)
            for _ in range(cfg.gt_copies):
                jv = _jitter_interval(rng, a.interval, cfg.max_jitter, duration)
                if jv is not None:
                    candidates.append(jv)

        pos: list[tuple[Interval, int, tuple[float, float]]] = []
        bg: list[Interval] = []
        for iv in candidates:
            lab = assign_label(iv, anns, cfg.pos_tiou, cfg.bg_tiou)
            if lab is None:
                continue
            cls, off = lab
            if cls == 0:
                bg.append(iv)
            else:
                pos.append((iv, cls, off))

        keep_bg = min(len(bg), max(round(cfg.bg_ratio * len(pos)), cfg.min_bg))
        picked = rng.choice(len(bg), size=keep_bg, replace=False) if bg else []
        chosen = pos + [(bg[i], 0, (0.0, 0.0)) for i in sorted(picked)]
        for iv, cls, off in chosen:
            classes.append(1 if binary and cls > 0 else cls)
            offsets.append(off)
            for name, seq in views:
                rows.setdefault(name, []).append(extract(seq, iv, spec).values)

    if not classes:
        raise DataError("no training clips survived labeling")
    cls_arr = np.asarray(classes, dtype=np.intp)
    off_arr = np.asarray(offsets, dtype=np.float64)
    return {
        name: TrainingSet(x=np.vstack(feats), classes=cls_arr, offsets=off_arr)
        for name, feats in rows.items()
    }


def train_stage(
    train_sets: dict[str, TrainingSet],
    class_count: int,
    cfg: TrainConfig,
    hidden: int,
) -> tuple[dict[str, TwoLayerNet], dict[str, list[tuple[int, float]]]]:
    """Initialize and train one head per stream; returns nets and loss curves."""
    nets: dict[str, TwoLayerNet] = {}
    curves: dict[str, list[tuple[int, float]]] = {}
    for i, name in enumerate(sorted(train_sets)):
        ts = train_sets[name]
        net = init_net(ts.x.shape[1], class_count, hidden=hidden, seed=cfg.seed + i)
        nets[name], curves[name] = train(net, ts.x, ts.classes, ts.offsets, cfg)
    return nets, curves


def generate_proposals(
    streams: dict[str, dict[str, FeatureSequence]],
    tpg_net: TwoLayerNet,
    spec: ReprSpec,
    window_cfg: WindowConfig = WindowConfig(),
    an: float = 500.0,
    nms_threshold: float = 0.5,
) -> dict[str, list[Proposal]]:
    """Slide, score, suppress, then keep the best AN proposals per video on
    average.  Returns per-video lists sorted by descending score."""
    video_ids = sorted(streams)

    def per_video(video_id: str) -> list[Proposal]:
        seq = tpg_view(streams[video_id])
        windows = slide_windows(float(seq.num_units), window_cfg)
        scored = score_proposals(tpg_net, seq, windows, spec, video_id=video_id)
        return nms(scored, nms_threshold)

    pooled: list[Proposal] = []
    for plist in _map_videos(per_video, video_ids):
        pooled.extend(plist)
    kept = select_by_an(pooled, an, len(video_ids))
    grouped: dict[str, list[Proposal]] = {v: [] for v in video_ids}
    for p in kept:
        grouped[p.video_id].append(p)
    return grouped


def jittered_proposals(
    manifest: DatasetManifest, amount: float = 2.0, seed: int = 0
) -> dict[str, list[Proposal]]:
    """Ground-truth intervals with each boundary displaced by exactly
    ``amount`` units in a random direction, as full-score proposals.

    Isolates the refinement stage: localization quality then depends only on
    how well the cascade pulls boundaries back."""
    rng = np.random.default_rng(seed)
    out: dict[str, list[Proposal]] = {v.video_id: [] for v in manifest.videos}
    for a in sorted(
        manifest.annotations,
        key=lambda a: (a.video_id, a.interval.start, a.interval.end, a.class_id),
    ):
        duration = manifest.video(a.video_id).duration
        options = []
        for ds in (-amount, amount):
            for de in (-amount, amount):
                lo = max(a.interval.start + ds, 0.0)
                hi = min(a.interval.end + de, duration)
                if hi - lo >= 1.0:
                    options.append(Interval(lo, hi))
        iv = options[rng.integers(len(options))] if options else a.interval
        out[a.video_id].append(Proposal(interval=iv, score=1.0, video_id=a.video_id))
    return out


def run_detection(
    streams: dict[str, dict[str, FeatureSequence]],
    det_nets: dict[str, TwoLayerNet],
    proposals: dict[str, list[Proposal]],
    spec: ReprSpec,
    cascade_cfg: CascadeConfig = CascadeConfig(),
    fusion: FusionMode = FusionMode.EARLY,
    nms_threshold: float = 0.5,
) -> list[Detection]:
    """Cascade every proposal of every video; returns all kept detections."""

    def per_video(video_id: str) -> list[Detection]:
        plist = proposals.get(video_id, [])
        if not plist:
            return []
        pairs: list[Stream] = []
        for name, seq in det_views(streams[video_id], fusion):
            if name not in det_nets:
                raise DataError(f"no trained net for stream {name!r}")
            pairs.append((det_nets[name], seq))
        return detect_video(
            pairs, plist, spec, cascade_cfg, nms_threshold, video_id=video_id
        )

    out: list[Detection] = []
    for dets in _map_videos(per_video, sorted(streams)):
        out.extend(dets)
    return out


def evaluate_detections(
    detections: list[Detection],
    manifest: DatasetManifest,
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    return map_at(detections, manifest.annotations, thresholds)

"""Cascaded multi-class detection over proposals, with two-stream fusion.

Each cascade step re-extracts a fixed-size feature from the current interval,
runs the shared head, and moves the boundaries by the argmax class's offsets.
The final class is the argmax of a weighted average of the per-step confidence
vectors; the final interval is the last refinement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from talkit.core import (
    MIN_SPAN,
    DataError,
    Detection,
    FeatureSequence,
    Interval,
    Proposal,
    ReprSpec,
)
from talkit.net import HeadOutput, TwoLayerNet, forward
from talkit.proposals import nms
from talkit.reprs import extract

_log = logging.getLogger(__name__)

# one (net, feature sequence) pair per stream feeding the cascade
Stream = tuple[TwoLayerNet, FeatureSequence]


class FusionMode(Enum):
    RGB = "rgb"
    FLOW = "flow"
    EARLY = "early"
    LATE = "late"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class CascadeConfig:
    """Number of refinement steps and how their confidences are combined."""

    steps: int = 3
    step_weights: tuple[float, ...] | None = None  # None means uniform
    clamp_to_video: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("cascade needs at least one step")
        if self.step_weights is not None:
            w = self.step_weights
            if len(w) != self.steps:
                raise ValueError(f"expected {self.steps} step weights, got {len(w)}")
            if any(v < 0 for v in w) or sum(w) <= 0:
                raise ValueError("step weights must be non-negative, not all zero")

    def weights(self) -> np.ndarray:
        if self.step_weights is None:
            return np.full(self.steps, 1.0 / self.steps)
        w = np.asarray(self.step_weights, dtype=np.float64)
        return w / w.sum()


def fuse_early(a: FeatureSequence, b: FeatureSequence) -> FeatureSequence:
    """Per-unit concatenation of two streams over the same timeline."""
    if a.num_units != b.num_units:
        raise DataError(
            f"stream lengths differ: {a.num_units} vs {b.num_units} units"
        )
    if a.video_id and b.video_id and a.video_id != b.video_id:
        raise DataError(f"streams from different videos: {a.video_id!r} vs {b.video_id!r}")
    return FeatureSequence(a.video_id or b.video_id, np.hstack([a.units, b.units]))


def fuse_late(*outs: HeadOutput) -> HeadOutput:
    """Elementwise mean of confidence vectors and of offsets."""
    if not outs:
        raise ValueError("nothing to fuse")
    shape = outs[0].probs.shape
    if any(o.probs.shape != shape for o in outs):
        raise DataError("fused heads disagree on class count")
    return HeadOutput(
        probs=np.mean([o.probs for o in outs], axis=0),
        offsets=np.mean([o.offsets for o in outs], axis=0),
    )


def _run_head(streams: list[Stream], interval: Interval, spec: ReprSpec) -> HeadOutput:
    heads = [forward(net, extract(seq, interval, spec).values) for net, seq in streams]
    return heads[0] if len(heads) == 1 else fuse_late(*heads)


def detect_clip(
    streams: list[Stream],
    interval: Interval,
    spec: ReprSpec,
    cfg: CascadeConfig = CascadeConfig(),
    video_id: str = "",
) -> Detection | None:
    """Run the cascade on one candidate interval.

    Returns None when the aggregated decision is background or when a
    refinement inverts the boundaries (divergence, not signal).
    """
    if not streams:
        raise ValueError("need at least one (net, sequence) stream")
    classes = streams[0][0].num_classes
    n_units = streams[0][1].num_units
    for net, seq in streams:
        if net.num_classes != classes:
            raise DataError("stream nets disagree on class count")
        if seq.num_units != n_units:
            raise DataError("stream sequences disagree on length")
    duration = float(n_units)
    tensor_ids = [tuple(id(t) for t in net.tensors()) for net, _ in streams]

    cur = interval
    step_probs: list[np.ndarray] = []
    step_scores: list[float] = []
    step_intervals: list[Interval] = []
    for _ in range(cfg.steps):
        # shared-weights contract: the same tensors serve every step
        for (net, _), ids in zip(streams, tensor_ids):
            assert tuple(id(t) for t in net.tensors()) == ids
        head = _run_head(streams, cur, spec)
        cls = head.best_class
        step_probs.append(head.probs)
        step_scores.append(float(head.probs[cls]))
        if cls != 0:
            ds, de = head.offsets[cls]
            lo, hi = cur.start + float(ds), cur.end + float(de)
            if cfg.clamp_to_video:
                lo = min(max(lo, 0.0), duration)
                hi = min(max(hi, 0.0), duration)
            if hi - lo < MIN_SPAN:
                _log.debug(
                    "%s: refinement inverted [%.3f, %.3f) -> [%.3f, %.3f); dropping clip",
                    video_id, cur.start, cur.end, lo, hi,
                )
                return None
            cur = Interval(lo, hi)
        step_intervals.append(cur)

    avg = cfg.weights() @ np.stack(step_probs)
    final = int(np.argmax(avg))
    if final == 0:
        return None
    return Detection(
        interval=cur,
        class_id=final,
        score=float(avg[final]),
        step_scores=tuple(step_scores),
        step_intervals=tuple(step_intervals),
        video_id=video_id,
    )


def detect_video(
    streams: list[Stream],
    proposals: list[Proposal],
    spec: ReprSpec,
    cfg: CascadeConfig = CascadeConfig(),
    nms_threshold: float = 0.5,
    video_id: str = "",
) -> list[Detection]:
    """Cascade every proposal, drop background, then class-wise NMS."""
    raw = []
    for p in proposals:
        det = detect_clip(streams, p.interval, spec, cfg, video_id=video_id)
        if det is not None:
            raw.append(det)
    return nms(raw, nms_threshold, class_wise=True)


def save_detections(path, detections: list[Detection]) -> None:
    with open(path, "w") as fh:
        for d in detections:
            fh.write(json.dumps(
                {
                    "video_id": d.video_id,
                    "class_id": d.class_id,
                    "start": d.interval.start,
                    "end": d.interval.end,
                    "score": d.score,
                },
                sort_keys=True,
            ) + "\n")


def load_detections(path) -> list[Detection]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"detection file not found: {path}")
    out = []
    for num, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(Detection(
                interval=Interval(float(rec["start"]), float(rec["end"])),
                class_id=int(rec["class_id"]),
                score=float(rec["score"]),
                video_id=str(rec["video_id"]),
            ))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}:{num}: bad detection record: {exc}") from None
    return out

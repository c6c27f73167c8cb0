"""Candidate interval generation and pruning.

A dense multi-scale sliding-window pass produces candidates; a binary
actionness head scores each one and nudges its boundaries once; the pool is
then cut to an average number of proposals per video and deduplicated with
temporal NMS.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

from talkit.core import DataError, Detection, FeatureSequence, Interval, Proposal, ReprSpec
from talkit.net import TwoLayerNet, forward
from talkit.reprs import extract

DEFAULT_WINDOW_LENGTHS = (1, 2, 4, 8, 16, 32)
_EPS = 1e-9


@dataclass(frozen=True)
class WindowConfig:
    """Multi-scale window sweep: each length slides by ``stride_fraction`` of
    itself."""

    lengths: tuple[int, ...] = DEFAULT_WINDOW_LENGTHS
    stride_fraction: float = 0.5

    def __post_init__(self):
        if not self.lengths:
            raise ValueError("need at least one window length")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("window lengths must be positive")
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise ValueError("window lengths must be strictly increasing")
        if not 0.0 < self.stride_fraction <= 1.0:
            raise ValueError("stride_fraction must be in (0, 1]")


def slide_windows(duration: float, cfg: WindowConfig = WindowConfig()) -> list[Interval]:
    """All window placements fully inside [0, duration), deduplicated and
    sorted.  A video shorter than every window yields the single clipped
    interval [0, duration)."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    seen: set[tuple[float, float]] = set()
    out: list[Interval] = []
    for length in cfg.lengths:
        stride = length * cfg.stride_fraction
        i = 0
        while True:
            start = i * stride
            if start + length > duration + _EPS:
                break
            iv = Interval(start, min(start + length, duration))
            key = (iv.start, iv.end)
            if key not in seen:
                seen.add(key)
                out.append(iv)
            i += 1
    if not out:
        out.append(Interval(0.0, duration))
    out.sort(key=lambda iv: (iv.start, iv.end))
    return out


def score_proposals(
    net: TwoLayerNet,
    seq: FeatureSequence,
    windows: list[Interval],
    spec: ReprSpec,
    video_id: str = "",
    refine: bool = True,
) -> list[Proposal]:
    """Score each window with the binary actionness head and refine its
    boundaries once using the action-class offsets.

    A refinement that collapses or leaves the video keeps the original
    window instead.  Output is sorted by descending score.
    """
    if net.num_classes != 1:
        raise DataError(
            f"proposal scoring needs a binary head, got {net.num_classes} classes"
        )
    out: list[Proposal] = []
    n = float(seq.num_units)
    for w in windows:
        head = forward(net, extract(seq, w, spec).values)
        score = float(head.probs[1])
        iv = w
        if refine:
            ds, de = head.offsets[1]
            lo = min(max(w.start + float(ds), 0.0), n)
            hi = min(max(w.end + float(de), 0.0), n)
            if hi - lo > _EPS:
                iv = Interval(lo, hi)
        out.append(Proposal(interval=iv, score=score, video_id=video_id))
    out.sort(key=lambda p: (-p.score, p.interval.start, p.interval.end))
    return out


def select_by_an(proposals: list[Proposal], an: float, num_videos: int) -> list[Proposal]:
    """Keep the globally best ``round(an * num_videos)`` proposals.

    Equivalent to a global score threshold with a deterministic tie-break on
    (score desc, video id, start, end).
    """
    if an <= 0 or num_videos <= 0:
        raise ValueError("an and num_videos must be positive")
    budget = round(an * num_videos)
    ranked = sorted(
        proposals, key=lambda p: (-p.score, p.video_id, p.interval.start, p.interval.end)
    )
    if budget >= len(ranked):
        if budget > len(ranked):
            warnings.warn(
                f"requested {budget} proposals but only {len(ranked)} exist",
                stacklevel=2,
            )
        return ranked
    return ranked[:budget]


def nms(items, threshold: float = 0.5, class_wise: bool = False):
    """Greedy temporal non-maximum suppression.

    Keeps the highest-scoring item, drops everything reaching ``threshold``
    tIoU against a kept item, repeats.  With ``class_wise`` only same-class
    pairs suppress each other (for detections).  Order of equal scores is
    fixed by (video id, start, end).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    ranked = sorted(
        items,
        key=lambda d: (-d.score, d.video_id, d.interval.start, d.interval.end),
    )
    kept: list = []
    for cand in ranked:
        ok = True
        for k in kept:
            if class_wise and _class_of(k) != _class_of(cand):
                continue
            if k.video_id != cand.video_id:
                continue
            if tiou_fast(k.interval, cand.interval) >= threshold:
                ok = False
                break
        if ok:
            kept.append(cand)
    return kept


def _class_of(item) -> int:
    return item.class_id if isinstance(item, Detection) else 0


def tiou_fast(a: Interval, b: Interval) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    return inter / (a.length + b.length - inter)


def save_proposals(path, proposals: list[Proposal]) -> None:
    with open(path, "w") as fh:
        for p in proposals:
            fh.write(json.dumps(
                {
                    "video_id": p.video_id,
                    "start": p.interval.start,
                    "end": p.interval.end,
                    "score": p.score,
                },
                sort_keys=True,
            ) + "\n")


def load_proposals(path) -> list[Proposal]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"proposal file not found: {path}")
    out = []
    for num, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(Proposal(
                interval=Interval(float(rec["start"]), float(rec["end"])),
                score=float(rec["score"]),
                video_id=str(rec["video_id"]),
            ))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}:{num}: bad proposal record: {exc}") from None
    return out

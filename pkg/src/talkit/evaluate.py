"""Detection scoring: greedy matching, per-class AP, mAP over tIoU thresholds.

AP uses the interpolated-precision envelope (p(r) = max precision at recall
>= r), the protocol of the standard localization benchmarks.  Classes with no
ground truth in the split are excluded from the mean unless detections were
produced for them, in which case they score 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from talkit.core import Annotation, DataError, Detection, tiou

DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)


def _ranked(detections: list[Detection]) -> list[Detection]:
    # stable tie-break so equal scores cannot reorder results between runs
    return sorted(
        detections,
        key=lambda d: (-d.score, d.video_id, d.interval.start, d.interval.end),
    )


def match_detections(
    detections: list[Detection],
    annotations: list[Annotation],
    class_id: int,
    threshold: float,
) -> np.ndarray:
    """Greedy TP/FP flags for one class at one tIoU threshold.

    Detections are taken in descending score order; each claims the
    highest-tIoU unmatched ground truth of its class in its video, and is a
    true positive when that tIoU reaches the threshold.
    """
    gts = [a for a in annotations if a.class_id == class_id]
    used = [False] * len(gts)
    dets = [d for d in _ranked(detections) if d.class_id == class_id]
    flags = np.zeros(len(dets), dtype=bool)
    for i, det in enumerate(dets):
        best, best_iou = -1, 0.0
        for j, gt in enumerate(gts):
            if used[j] or gt.video_id != det.video_id:
                continue
            v = tiou(det.interval, gt.interval)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= threshold:
            used[best] = True
            flags[i] = True
    return flags


def average_precision(flags: np.ndarray, num_gt: int) -> float | None:
    """Envelope-interpolated AP from ordered TP/FP flags.

    Returns None (class excluded) when the class has no ground truth and no
    detections; 0.0 when detections exist for an absent class.
    """
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    flags = np.asarray(flags, dtype=bool)
    if num_gt == 0:
        return None if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # envelope: precision at each recall becomes the max at any higher recall
    env = np.maximum.accumulate(precision[::-1])[::-1]
    r = np.concatenate([[0.0], recall])
    return float(np.sum((r[1:] - r[:-1]) * env))


@dataclass(frozen=True)
class EvalReport:
    """AP per class per threshold, and the per-threshold mean."""

    thresholds: tuple[float, ...]
    class_ids: tuple[int, ...]
    ap: dict[float, dict[int, float | None]] = field(repr=False)
    map_by_threshold: dict[float, float] = field(default_factory=dict)

    def text_table(self) -> str:
        head = ["class".ljust(8)] + [f"AP@{t:g}".rjust(9) for t in self.thresholds]
        lines = ["".join(head)]
        for c in self.class_ids:
            cells = [f"{c}".ljust(8)]
            for t in self.thresholds:
                v = self.ap[t][c]
                cells.append(("    -    " if v is None else f"{100 * v:8.2f} ").rjust(9))
            lines.append("".join(cells))
        cells = ["mAP".ljust(8)]
        cells += [f"{100 * self.map_by_threshold[t]:8.2f} ".rjust(9) for t in self.thresholds]
        lines.append("".join(cells))
        return "\n".join(lines)

    def csv(self) -> str:
        lines = ["class," + ",".join(f"{t:g}" for t in self.thresholds)]
        for c in self.class_ids:
            row = [str(c)]
            for t in self.thresholds:
                v = self.ap[t][c]
                row.append("" if v is None else repr(v))
            lines.append(",".join(row))
        lines.append("mAP," + ",".join(repr(self.map_by_threshold[t]) for t in self.thresholds))
        return "\n".join(lines) + "\n"


def map_at(
    detections: list[Detection],
    annotations: list[Annotation],
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Evaluate detections against ground truth at each tIoU threshold.

    mAP is the unweighted mean over classes that have ground truth; a class
    that appears only in detections contributes an AP of 0.
    """
    if not annotations:
        raise DataError("cannot evaluate against an empty annotation set")
    if not thresholds:
        raise ValueError("need at least one tIoU threshold")
    classes = sorted(
        {a.class_id for a in annotations} | {d.class_id for d in detections}
    )
    gt_count = {c: sum(a.class_id == c for a in annotations) for c in classes}
    ap: dict[float, dict[int, float | None]] = {}
    map_by_threshold: dict[float, float] = {}
    for t in thresholds:
        per_class: dict[int, float | None] = {}
        for c in classes:
            flags = match_detections(detections, annotations, c, t)
            per_class[c] = average_precision(flags, gt_count[c])
        ap[t] = per_class
        scored = [per_class[c] for c in classes if gt_count[c] > 0]
        map_by_threshold[t] = float(np.mean(scored)) if scored else 0.0
    return EvalReport(
        thresholds=tuple(thresholds),
        class_ids=tuple(classes),
        ap=ap,
        map_by_threshold=map_by_threshold,
    )

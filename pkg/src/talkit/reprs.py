"""Fixed-size proposal representations and the detection-head size calculator.

Three families turn a variable-length interval over unit features into one
fixed-length vector: plain/k-part average pooling, structured temporal pyramid
pooling, and boundary-sensitive interpolated sampling.  All of them are pure
functions; fractional boundaries weight partially covered units by the covered
fraction, so the k parts of an interval tile it exactly for any k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from talkit.core import MIN_SPAN, FeatureSequence, Interval, ReprSpec, repr_output_dim
from talkit.features import interpolate_at


@dataclass(frozen=True, eq=False)
class FixedFeature:
    """Fixed-length feature vector for one proposal under one representation."""

    values: np.ndarray
    spec: ReprSpec

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        expected = self.spec.block_count
        if arr.ndim != 1 or arr.shape[0] % expected != 0:
            raise ValueError(
                f"feature length {arr.shape} does not split into {expected} blocks"
            )


def _span_mean(seq: FeatureSequence, lo: float, hi: float) -> np.ndarray:
    """Fraction-weighted mean of the unit rows covered by [lo, hi).

    Requires hi > lo with the span inside [0, num_units].
    """
    first = int(np.floor(lo))
    last = int(np.ceil(hi))
    rows = seq.units[first:last]
    edges = np.arange(first, last, dtype=np.float64)
    weights = np.minimum(edges + 1.0, hi) - np.maximum(edges, lo)
    return (weights @ rows) / weights.sum()


def _clamp_span(seq: FeatureSequence, interval: Interval) -> tuple[float, float]:
    lo = max(interval.start, 0.0)
    hi = min(interval.end, float(seq.num_units))
    if hi - lo < MIN_SPAN:
        raise ValueError(
            f"degenerate interval [{interval.start}, {interval.end}) on a "
            f"{seq.num_units}-unit sequence"
        )
    return lo, hi


def _context_mean(seq: FeatureSequence, lo: float, hi: float) -> np.ndarray:
    """Mean pool over a context region, clamped to the sequence extent.

    An empty region (zero n_ctx, or a proposal flush against the video edge)
    falls back to the nearest boundary unit's vector so context blocks never
    degenerate to NaN.
    """
    n = seq.num_units
    clo, chi = max(lo, 0.0), min(hi, float(n))
    if chi - clo < MIN_SPAN:
        idx = int(np.clip(np.floor((lo + hi) / 2.0), 0, n - 1))
        return seq.units[idx].astype(np.float64)
    return _span_mean(seq, clo, chi)


def global_avg_pool(seq: FeatureSequence, interval: Interval) -> np.ndarray:
    """Average the unit vectors covered by the interval.

    Fractional end units contribute in proportion to the covered fraction,
    checked in the tests against a fine-grained Riemann-sum oracle.
    """
    lo, hi = _clamp_span(seq, interval)
    return _span_mean(seq, lo, hi)


def _part_means(seq: FeatureSequence, lo: float, hi: float, parts: int) -> list[np.ndarray]:
    length = hi - lo
    return [
        _span_mean(seq, lo + (i * length) / parts, lo + ((i + 1) * length) / parts)
        for i in range(parts)
    ]


def kpart_pool(seq: FeatureSequence, interval: Interval, k: int, n_ctx: float = 2.0) -> np.ndarray:
    """Split the interval into k equal non-overlapping parts and pool each.

    Output is context-start || part 1..k || context-end; the context blocks are
    mean pools over the n_ctx units before the start and after the end, and are
    omitted entirely when n_ctx == 0.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lo, hi = _clamp_span(seq, interval)
    blocks = _part_means(seq, lo, hi, k)
    if n_ctx > 0:
        blocks = [_context_mean(seq, lo - n_ctx, lo)] + blocks + [_context_mean(seq, hi, hi + n_ctx)]
    return np.concatenate(blocks)


def stpp(seq: FeatureSequence, interval: Interval, levels, n_ctx: float = 2.0) -> np.ndarray:
    """Structured temporal pyramid over the interval course.

    The starting and ending stages are one-level pools over the context
    regions; the course stage concatenates, level by level, the B_l equal-part
    pools of the interval itself.
    """
    levels = tuple(int(b) for b in levels)
    if not levels or any(b < 1 for b in levels):
        raise ValueError(f"need at least one pyramid level with >= 1 parts, got {levels}")
    lo, hi = _clamp_span(seq, interval)
    blocks = [_context_mean(seq, lo - n_ctx, lo)]
    for parts in levels:
        blocks.extend(_part_means(seq, lo, hi, parts))
    blocks.append(_context_mean(seq, hi, hi + n_ctx))
    return np.concatenate(blocks)


def _sample_points(seq: FeatureSequence, lo: float, hi: float, count: int) -> np.ndarray:
    # Endpoints included; a single point degenerates to the region midpoint.
    if count == 1:
        idx = np.array([(lo + hi) / 2.0])
    else:
        idx = lo + np.arange(count, dtype=np.float64) * (hi - lo) / (count - 1)
    return interpolate_at(seq, idx)


def bsp_sample(
    seq: FeatureSequence, interval: Interval, a_points: int, b_points: int, n_ctx: float = 2.0
) -> np.ndarray:
    """Boundary-sensitive sampling: interpolated points plus pooled context.

    b_points are sampled at equally spaced fractional indices across
    [start, end] (both endpoints included), a_points likewise across each
    context region; one mean-pooled block per context region is prepended and
    appended.  Sample indices outside the sequence clamp to the boundary rows.
    """
    if a_points < 1 or b_points < 1:
        raise ValueError("bsp needs at least one point per region")
    lo, hi = _clamp_span(seq, interval)
    parts = [
        _context_mean(seq, lo - n_ctx, lo)[None, :],
        _sample_points(seq, lo - n_ctx, lo, a_points),
        _sample_points(seq, lo, hi, b_points),
        _sample_points(seq, hi, hi + n_ctx, a_points),
        _context_mean(seq, hi, hi + n_ctx)[None, :],
    ]
    return np.concatenate(parts).reshape(-1)


def extract(seq: FeatureSequence, interval: Interval, spec: ReprSpec) -> FixedFeature:
    """Build the fixed-size feature for ``interval`` under ``spec``."""
    if spec.kind == "global":
        if spec.n_ctx > 0:
            values = kpart_pool(seq, interval, 1, spec.n_ctx)
        else:
            values = global_avg_pool(seq, interval)
    elif spec.kind == "kpart":
        values = kpart_pool(seq, interval, spec.k, spec.n_ctx)
    elif spec.kind == "stpp":
        values = stpp(seq, interval, spec.levels, spec.n_ctx)
    else:
        values = bsp_sample(seq, interval, spec.a_points, spec.b_points, spec.n_ctx)
    assert values.shape == (repr_output_dim(spec, seq.dim),)
    return FixedFeature(values, spec)


def param_count(spec: ReprSpec, dim: int, class_count: int, hidden: int = 1000) -> int:
    """Trainable parameter count of the two-layer detection head.

    First layer maps the representation to ``hidden`` features, the second to
    one (confidence, start offset, end offset) triple per class including
    background.
    """
    n_f = repr_output_dim(spec, dim)
    out_dim = (class_count + 1) * 3
    return n_f * hidden + hidden + hidden * out_dim + out_dim


#: The eight reference configurations of the head-size table, in column order.
TABLE_SPECS: tuple[ReprSpec, ...] = (
    ReprSpec.stpp((1, 2)),
    ReprSpec.stpp((1, 2, 4)),
    ReprSpec.bsp(2, 4),
    ReprSpec.bsp(4, 8),
    ReprSpec.bsp(8, 16),
    ReprSpec.kpart(3),
    ReprSpec.kpart(5),
    ReprSpec.kpart(10),
)


def param_table(dim: int = 4096, class_count: int = 20) -> list[tuple[str, int]]:
    """(label, parameter count) for the eight reference configurations."""
    return [(spec.label, param_count(spec, dim, class_count)) for spec in TABLE_SPECS]

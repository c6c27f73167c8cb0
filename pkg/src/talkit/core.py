"""Shared domain types for temporal action localization over unit-level features.

A *unit* is a fixed block of 16 consecutive video frames represented by one
precomputed feature vector.  Every temporal coordinate in this package is a
fractional unit index; intervals are half-open ``[start, end)``.  Class id 0
denotes background, action classes are ``1..C``.

All types here are immutable values and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FRAMES_PER_UNIT = 16

#: Spans shorter than this (in units) are treated as degenerate and rejected.
MIN_SPAN = 1e-6


class DataError(Exception):
    """Malformed input data: bad files, inconsistent manifests, shape mismatches."""


class NumericError(Exception):
    """Numerical failure during training or inference (NaN loss, divergence)."""


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open temporal span ``[start, end)`` in fractional unit coordinates."""

    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"interval endpoints must be finite, got [{self.start}, {self.end})")
        if self.start < 0.0:
            raise ValueError(f"interval start must be non-negative, got {self.start}")
        if not self.start < self.end:
            raise ValueError(f"interval needs start < end, got [{self.start}, {self.end})")

    @property
    def length(self) -> float:
        return self.end - self.start


def tiou(a: Interval, b: Interval) -> float:
    """Temporal intersection-over-union of two intervals.

    Returns overlap length divided by union length, in [0, 1]; 0 when the
    intervals are disjoint (or merely touching, since spans are half-open).
    """
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Per-video matrix of unit-level feature vectors, one row per unit.

    The row matrix is copied on construction and frozen, so a sequence can be
    shared freely once built.
    """

    video_id: str
    units: np.ndarray  # (num_units, dim), float64

    def __post_init__(self):
        arr = np.array(self.units, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"unit matrix must be 2-d and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"unit features for {self.video_id!r} contain non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "units", arr)

    @property
    def num_units(self) -> int:
        return self.units.shape[0]

    @property
    def dim(self) -> int:
        return self.units.shape[1]


@dataclass(frozen=True)
class Proposal:
    """Candidate action interval with an actionness score in [0, 1]."""

    interval: Interval
    score: float
    video_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"proposal score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Detection:
    """Classified interval emitted by the detector.

    ``class_id`` is always an action class (>= 1); background decisions are
    dropped, not emitted.  ``step_scores`` and ``step_intervals`` trace the
    per-step confidence of the final class and the refined interval after each
    cascade step.
    """

    interval: Interval
    class_id: int
    score: float
    step_scores: tuple[float, ...] = ()
    step_intervals: tuple[Interval, ...] = ()
    video_id: str = ""

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"detection class_id must be an action class >= 1, got {self.class_id}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Annotation:
    """Ground-truth action instance for one video."""

    video_id: str
    class_id: int
    interval: Interval

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"annotation class_id must be >= 1, got {self.class_id}")


_KINDS = ("global", "kpart", "stpp", "bsp")


@dataclass(frozen=True)
class ReprSpec:
    """Which fixed-size representation to build from a proposal, plus its knobs.

    Variants:
      * ``global`` -- average pool over the whole interval
      * ``kpart``  -- k contiguous equal parts, each average pooled
      * ``stpp``   -- pyramid over the interval course plus pooled start/end stages
      * ``bsp``    -- interpolated boundary sample points plus pooled context

    ``n_ctx`` is the temporal context, in units, pooled before the start and
    after the end.  For ``global``/``kpart`` the two context blocks appear only
    when ``n_ctx > 0``; ``stpp`` and ``bsp`` always carry their start/end
    blocks as part of the structure.
    """

    kind: str
    k: int = 1
    levels: tuple[int, ...] = ()
    a_points: int = 0
    b_points: int = 0
    n_ctx: float = 2.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown representation kind {self.kind!r}")
        if self.n_ctx < 0:
            raise ValueError("n_ctx must be >= 0")
        if self.kind == "kpart" and self.k < 1:
            raise ValueError("kpart needs k >= 1")
        if self.kind == "stpp":
            if not self.levels or any(b < 1 for b in self.levels):
                raise ValueError("stpp needs at least one level with >= 1 parts each")
        if self.kind == "bsp" and (self.a_points < 1 or self.b_points < 1):
            raise ValueError("bsp needs at least one sample point per region")

    # -- constructors -------------------------------------------------------

    @classmethod
    def global_pool(cls, n_ctx: float = 2.0) -> "ReprSpec":
        return cls("global", n_ctx=n_ctx)

    @classmethod
    def kpart(cls, k: int, n_ctx: float = 2.0) -> "ReprSpec":
        return cls("kpart", k=k, n_ctx=n_ctx)

    @classmethod
    def stpp(cls, levels=(1, 2), n_ctx: float = 2.0) -> "ReprSpec":
        return cls("stpp", levels=tuple(int(b) for b in levels), n_ctx=n_ctx)

    @classmethod
    def bsp(cls, a_points: int = 8, b_points: int = 16, n_ctx: float = 2.0) -> "ReprSpec":
        return cls("bsp", a_points=a_points, b_points=b_points, n_ctx=n_ctx)

    @classmethod
    def parse(cls, text: str, n_ctx: float = 2.0) -> "ReprSpec":
        """Parse a compact spec string: ``global``, ``kpart:5``, ``stpp:1,2``,
        ``bsp:8/16/8`` (context/interior/context point counts)."""
        text = text.strip()
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        try:
            if kind == "global" and not arg:
                return cls.global_pool(n_ctx=n_ctx)
            if kind == "kpart":
                return cls.kpart(int(arg), n_ctx=n_ctx)
            if kind == "stpp":
                return cls.stpp(tuple(int(b) for b in arg.split(",")), n_ctx=n_ctx)
            if kind == "bsp":
                parts = [int(p) for p in arg.split("/")]
                if len(parts) == 3 and parts[0] != parts[2]:
                    raise ValueError("bsp wants symmetric context counts a/b/a")
                if len(parts) not in (2, 3):
                    raise ValueError("bsp wants a/b/a or a/b")
                return cls.bsp(parts[0], parts[1], n_ctx=n_ctx)
        except ValueError as exc:
            raise ValueError(f"cannot parse representation spec {text!r}: {exc}") from None
        raise ValueError(f"cannot parse representation spec {text!r}")

    # -- derived quantities -------------------------------------------------

    @property
    def block_count(self) -> int:
        """Number of d-dimensional blocks in the concatenated output."""
        ctx_blocks = 2 if self.n_ctx > 0 else 0
        if self.kind == "global":
            return 1 + ctx_blocks
        if self.kind == "kpart":
            return self.k + ctx_blocks
        if self.kind == "stpp":
            return 2 + sum(self.levels)
        return 2 * self.a_points + self.b_points + 2

    @property
    def label(self) -> str:
        if self.kind == "global":
            return "global"
        if self.kind == "kpart":
            return f"pool k={self.k}"
        if self.kind == "stpp":
            return f"STPP L={len(self.levels)}"
        return f"BSP {self.a_points}/{self.b_points}/{self.a_points}"

    def __str__(self) -> str:
        if self.kind == "global":
            return "global"
        if self.kind == "kpart":
            return f"kpart:{self.k}"
        if self.kind == "stpp":
            return "stpp:" + ",".join(str(b) for b in self.levels)
        return f"bsp:{self.a_points}/{self.b_points}/{self.a_points}"


def repr_output_dim(spec: ReprSpec, dim: int) -> int:
    """Length of the fixed-size vector ``spec`` produces over ``dim``-d units."""
    if dim < 1:
        raise ValueError(f"feature dimension must be >= 1, got {dim}")
    return spec.block_count * dim

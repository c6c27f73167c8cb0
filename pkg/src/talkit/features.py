"""Feature-file and annotation ingestion, plus the synthetic ground-truth generator.

File formats (all little-endian, one file per video per stream):

  * ``.uft`` unit features: magic ``UFT1``, u32 unit count n, u32 dimension d,
    then n*d IEEE-754 float32 values row-major.
  * annotations: JSON lines with fields video_id, class_id, start_unit, end_unit.
  * ``manifest.json``: class count plus per-video duration and stream paths.

The synthetic generator plants class-specific temporal signatures into noise.
Classes come in pairs whose signatures are time reversals of each other, so
their per-span feature means coincide while any order-aware representation can
tell them apart.  Generation is a pure function of the seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from talkit.core import Annotation, DataError, FeatureSequence, Interval

UFT_MAGIC = b"UFT1"
_UFT_HEADER = struct.Struct("<4sII")

#: Amplitude of the planted class signatures, well above unit-variance noise.
SIGNATURE_AMP = 2.0

#: Pieces per class signature (first half / second half of the action span).
SIGNATURE_PIECES = 2

#: Background units kept free around every planted action, in units.
PLACEMENT_MARGIN = 2


# ---------------------------------------------------------------------------
# unit-feature files
# ---------------------------------------------------------------------------

def save_features(path, seq: FeatureSequence) -> None:
    """Write a feature sequence as a ``.uft`` file (bit-exact format)."""
    path = Path(path)
    data = np.ascontiguousarray(seq.units, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_UFT_HEADER.pack(UFT_MAGIC, seq.num_units, seq.dim))
        fh.write(data.tobytes())


def load_features(path, video_id: str | None = None) -> FeatureSequence:
    """Read a ``.uft`` file, validating magic, header sizes and payload length.

    ``video_id`` defaults to the file name up to the first dot, so
    ``v012.rgb.uft`` maps to video ``v012``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _UFT_HEADER.size:
        raise DataError(f"feature file too short for header: {path}")
    magic, n, d = _UFT_HEADER.unpack_from(raw)
    if magic != UFT_MAGIC:
        raise DataError(f"bad magic {magic!r} in {path}, expected {UFT_MAGIC!r}")
    if n < 1 or d < 1:
        raise DataError(f"degenerate header n={n}, d={d} in {path}")
    expected = _UFT_HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise DataError(
            f"payload size mismatch in {path}: header promises {expected} bytes, file has {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_UFT_HEADER.size).reshape(n, d)
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite feature values in {path}")
    if video_id is None:
        video_id = path.name.split(".")[0]
    return FeatureSequence(video_id, values.astype(np.float64))


# ---------------------------------------------------------------------------
# annotations and manifest
# ---------------------------------------------------------------------------

def save_annotations(path, annotations) -> None:
    lines = []
    for a in annotations:
        lines.append(json.dumps(
            {
                "video_id": a.video_id,
                "class_id": a.class_id,
                "start_unit": a.interval.start,
                "end_unit": a.interval.end,
            },
            sort_keys=True,
        ))
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_annotations(path) -> list[Annotation]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotation file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(Annotation(
                video_id=str(obj["video_id"]),
                class_id=int(obj["class_id"]),
                interval=Interval(float(obj["start_unit"]), float(obj["end_unit"])),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad annotation line: {exc}") from None
    return out


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    duration: float  # units
    rgb: str         # path relative to the manifest directory
    flow: str


@dataclass
class DatasetManifest:
    """Index of a dataset on disk: videos, stream files, annotations, classes."""

    class_count: int
    videos: list[VideoEntry]
    annotations: list[Annotation]
    root: Path

    def validate(self) -> None:
        if self.class_count < 1:
            raise DataError(f"class_count must be >= 1, got {self.class_count}")
        durations = {}
        for v in self.videos:
            if v.video_id in durations:
                raise DataError(f"duplicate video id {v.video_id!r} in manifest")
            if v.duration < 1:
                raise DataError(f"video {v.video_id!r} has duration {v.duration} < 1 unit")
            durations[v.video_id] = v.duration
        for a in self.annotations:
            if a.video_id not in durations:
                raise DataError(f"annotation references unknown video {a.video_id!r}")
            if not 1 <= a.class_id <= self.class_count:
                raise DataError(
                    f"annotation class {a.class_id} outside 1..{self.class_count} in {a.video_id!r}"
                )
            if a.interval.start < 0 or a.interval.end > durations[a.video_id] + 1e-9:
                raise DataError(
                    f"annotation {a.interval} exceeds video {a.video_id!r} "
                    f"duration {durations[a.video_id]}"
                )

    def video(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise DataError(f"unknown video {video_id!r}")

    def annotations_for(self, video_id: str) -> list[Annotation]:
        return [a for a in self.annotations if a.video_id == video_id]

    def stream_path(self, video_id: str, stream: str) -> Path:
        entry = self.video(video_id)
        rel = entry.rgb if stream == "rgb" else entry.flow
        return self.root / rel


def save_manifest(out_dir, manifest: DatasetManifest) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_annotations(out_dir / "annotations.jsonl", manifest.annotations)
    doc = {
        "annotations": "annotations.jsonl",
        "class_count": manifest.class_count,
        "videos": [
            {
                "video_id": v.video_id,
                "duration_units": v.duration,
                "rgb": v.rgb,
                "flow": v.flow,
            }
            for v in manifest.videos
        ],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
        videos = [
            VideoEntry(
                video_id=str(v["video_id"]),
                duration=float(v["duration_units"]),
                rgb=str(v["rgb"]),
                flow=str(v["flow"]),
            )
            for v in doc["videos"]
        ]
        manifest = DatasetManifest(
            class_count=int(doc["class_count"]),
            videos=videos,
            annotations=load_annotations(path.parent / doc["annotations"]),
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from None
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# fractional-index feature access
# ---------------------------------------------------------------------------

def unit_feature(seq: FeatureSequence, index: float) -> np.ndarray:
    """Feature vector at a fractional unit index by linear interpolation.

    Integer indices return the stored row exactly; indices outside
    ``[0, n-1]`` clamp to the boundary rows (cascade refinement can push a
    boundary past the sequence edge, which must not fault).
    """
    return interpolate_at(seq, np.array([index], dtype=np.float64))[0]


def interpolate_at(seq: FeatureSequence, indices: np.ndarray) -> np.ndarray:
    """Vectorized linear interpolation of unit rows at fractional indices."""
    n = seq.num_units
    idx = np.clip(np.asarray(indices, dtype=np.float64), 0.0, float(n - 1))
    lo = np.floor(idx).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    w = (idx - lo)[:, None]
    return (1.0 - w) * seq.units[lo] + w * seq.units[hi]


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic oracle dataset."""

    num_videos: int = 100
    units_per_video: int = 200
    dim_per_stream: int = 8
    class_count: int = 4
    actions_per_video: int = 3
    min_action_len: int = 8
    max_action_len: int = 20
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.num_videos, self.units_per_video, self.dim_per_stream,
            self.class_count, self.actions_per_video,
            self.min_action_len, self.max_action_len,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all synthetic dataset counts must be positive")
        if not self.min_action_len <= self.max_action_len <= self.units_per_video:
            raise ValueError("need min_action_len <= max_action_len <= units_per_video")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        pairs = (self.class_count + 1) // 2
        if self.dim_per_stream < 2 * pairs:
            raise ValueError(
                f"dim_per_stream={self.dim_per_stream} too small for "
                f"{self.class_count} classes; need >= {2 * pairs} for disjoint signatures"
            )


def paired_classes(class_count: int) -> list[tuple[int, int]]:
    """Class id pairs whose signatures are time reversals of each other."""
    return [(2 * q + 1, 2 * q + 2) for q in range((class_count) // 2)]


def class_signature(class_id: int, dim: int) -> np.ndarray:
    """Ordered sub-pattern vectors for a class, shape (pieces, dim).

    Pair partner classes (2q+1, 2q+2) use the same two one-hot patterns in
    opposite order, so their time averages coincide exactly.
    """
    pair = (class_id - 1) // 2
    a, b = 2 * pair, 2 * pair + 1
    if b >= dim:
        raise ValueError(f"dim={dim} too small for class {class_id}")
    sig = np.zeros((SIGNATURE_PIECES, dim))
    sig[0, a] = SIGNATURE_AMP
    sig[1, b] = SIGNATURE_AMP
    if (class_id - 1) % 2 == 1:
        sig = sig[::-1].copy()
    return sig


def planted_units(signature: np.ndarray, length: int) -> np.ndarray:
    """Clean unit features for an action of ``length`` units.

    Unit j carries the signature averaged over its share [j/L, (j+1)/L) of the
    normalized action span, so the span mean equals the signature mean for
    every length.
    """
    pieces, dim = signature.shape
    out = np.zeros((length, dim))
    for j in range(length):
        lo, hi = j / length, (j + 1) / length
        for p in range(pieces):
            overlap = min(hi, (p + 1) / pieces) - max(lo, p / pieces)
            if overlap > 0:
                out[j] += (overlap * length) * signature[p]
    return out


def generate_synthetic(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Generate the synthetic dataset on disk and return its manifest.

    Videos are partitioned into one block per action; each action is placed
    uniformly inside its block with a background margin on both sides.  The
    same clean signal is planted in both streams; noise draws are independent.
    Identical seeds give byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    block = cfg.units_per_video // cfg.actions_per_video
    slack = block - cfg.max_action_len - 2 * PLACEMENT_MARGIN
    if slack < 0:
        raise DataError(
            f"infeasible placement: {cfg.actions_per_video} actions of up to "
            f"{cfg.max_action_len} units (margin {PLACEMENT_MARGIN}) do not fit in "
            f"{cfg.units_per_video} units"
        )
    rng = np.random.default_rng(cfg.seed)
    n, d = cfg.units_per_video, cfg.dim_per_stream
    videos, annotations = [], []
    for v in range(cfg.num_videos):
        video_id = f"synth{v:04d}"
        clean = np.zeros((n, d))
        for slot in range(cfg.actions_per_video):
            class_id = int(rng.integers(1, cfg.class_count + 1))
            length = int(rng.integers(cfg.min_action_len, cfg.max_action_len + 1))
            room = block - length - 2 * PLACEMENT_MARGIN
            start = slot * block + PLACEMENT_MARGIN + int(rng.integers(0, room + 1))
            clean[start:start + length] += planted_units(class_signature(class_id, d), length)
            annotations.append(Annotation(video_id, class_id, Interval(float(start), float(start + length))))
        paths = {}
        for stream in ("rgb", "flow"):
            values = clean + cfg.noise_std * rng.standard_normal((n, d))
            rel = f"{video_id}.{stream}.uft"
            save_features(out_dir / rel, FeatureSequence(video_id, values))
            paths[stream] = rel
        videos.append(VideoEntry(video_id, float(n), paths["rgb"], paths["flow"]))
    manifest = DatasetManifest(cfg.class_count, videos, annotations, out_dir)
    manifest.validate()
    save_manifest(out_dir, manifest)
    return manifest

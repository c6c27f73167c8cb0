"""Command-line front end: reproducible experiments from a flat TOML config.

Every tunable lives in the config with its standard default; commands write
their artifacts under the configured output directory together with a
``run.json`` echoing the resolved config, the seed, and checkpoint hashes.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from talkit.core import DataError, NumericError, ReprSpec
from talkit.detector import CascadeConfig, FusionMode, load_detections, save_detections
from talkit.evaluate import map_at
from talkit.features import SynthConfig, generate_synthetic, load_manifest
from talkit.net import TrainConfig, load_net, save_loss_curve, save_net
from talkit.pipeline import (
    SampleConfig,
    build_training_set,
    det_views,
    evaluate_detections,
    generate_proposals,
    load_streams,
    run_detection,
    tpg_view,
    train_stage,
)
from talkit.proposals import WindowConfig, save_proposals
from talkit.reprs import param_table, repr_output_dim

SINGLE_STREAM_LR = 0.005
TWO_STREAM_LR = 0.001


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings; field names double as TOML keys."""

    seed: int
    manifest: str = ""
    out_dir: str = "runs/default"
    repr: str = "kpart:5"
    n_ctx: float = 2.0
    hidden: int = 1000
    batch_size: int = 128
    learning_rate: float | None = None  # None: 0.005 single stream, 0.001 fused
    iterations: int = 50000
    lr_decay_at: tuple[int, ...] = (30000,)
    lr_decay_factor: float = 0.1
    reg_weight: float = 1.0
    window_lengths: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    stride_fraction: float = 0.5
    an: float = 500.0
    proposal_nms: float = 0.5
    detection_nms: float = 0.5
    cascade_steps: int = 3
    step_weights: tuple[float, ...] | None = None
    fusion: str = "early"
    thresholds: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7)
    pos_tiou: float = 0.5
    bg_tiou: float = 0.3
    gt_copies: int = 2
    max_jitter: float = 2.0
    bg_ratio: float = 1.0
    synth_num_videos: int = 100
    synth_units: int = 200
    synth_dim: int = 8
    synth_classes: int = 4
    synth_actions: int = 3
    synth_min_len: int = 8
    synth_max_len: int = 20
    synth_noise: float = 0.1

    # -- derived views ----------------------------------------------------
    def spec(self) -> ReprSpec:
        return dataclasses.replace(ReprSpec.parse(self.repr), n_ctx=self.n_ctx)

    def fusion_mode(self) -> FusionMode:
        try:
            return FusionMode(self.fusion)
        except ValueError:
            raise UsageError(
                f"fusion must be one of rgb/flow/early/late, got {self.fusion!r}"
            ) from None

    def resolved_lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        single = self.fusion_mode() in (FusionMode.RGB, FusionMode.FLOW)
        return SINGLE_STREAM_LR if single else TWO_STREAM_LR

    def train_cfg(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.resolved_lr(),
            iterations=self.iterations,
            lr_decay_at=tuple(self.lr_decay_at),
            lr_decay_factor=self.lr_decay_factor,
            seed=self.seed,
            reg_weight=self.reg_weight,
        )

    def window_cfg(self) -> WindowConfig:
        return WindowConfig(tuple(self.window_lengths), self.stride_fraction)

    def cascade_cfg(self) -> CascadeConfig:
        w = tuple(self.step_weights) if self.step_weights is not None else None
        return CascadeConfig(self.cascade_steps, w)

    def sample_cfg(self) -> SampleConfig:
        return SampleConfig(
            pos_tiou=self.pos_tiou,
            bg_tiou=self.bg_tiou,
            gt_copies=self.gt_copies,
            max_jitter=self.max_jitter,
            bg_ratio=self.bg_ratio,
            seed=self.seed,
        )

    def synth_cfg(self) -> SynthConfig:
        return SynthConfig(
            num_videos=self.synth_num_videos,
            units_per_video=self.synth_units,
            dim_per_stream=self.synth_dim,
            class_count=self.synth_classes,
            actions_per_video=self.synth_actions,
            min_action_len=self.synth_min_len,
            max_action_len=self.synth_max_len,
            noise_std=self.synth_noise,
            seed=self.seed,
        )

    def dataset_dir(self) -> Path:
        if not self.manifest:
            raise UsageError("config is missing the 'manifest' path")
        p = Path(self.manifest)
        return p.parent if p.suffix == ".json" else p


_TUPLE_KEYS = {"lr_decay_at", "window_lengths", "step_weights", "thresholds"}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    if "seed" not in doc:
        raise UsageError("config must set an explicit seed")
    for key in _TUPLE_KEYS & set(doc):
        doc[key] = tuple(doc[key])
    try:
        return ExperimentConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_record(out_dir: Path, command: str, cfg: ExperimentConfig, outputs) -> None:
    record = {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "checkpoints": {
            p.name: _sha256(p) for p in sorted(out_dir.glob("*.tln"))
        },
        "outputs": sorted(str(Path(o).name) for o in outputs),
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _prepare(cfg: ExperimentConfig):
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(cfg.manifest)
    return out_dir, manifest, load_streams(manifest)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(cfg: ExperimentConfig) -> int:
    target = cfg.dataset_dir()
    manifest = generate_synthetic(cfg.synth_cfg(), target)
    print(f"wrote {len(manifest.videos)} videos, {len(manifest.annotations)} "
          f"annotations to {target}")
    return 0


def cmd_train_tpg(cfg: ExperimentConfig) -> int:
    out_dir, manifest, streams = _prepare(cfg)
    sets = build_training_set(
        manifest, streams, cfg.spec(), cfg.sample_cfg(), cfg.window_cfg(), binary=True
    )
    nets, curves = train_stage(sets, 1, cfg.train_cfg(), cfg.hidden)
    outputs = []
    for name, net in nets.items():
        ck, curve_path = out_dir / "tpg.tln", out_dir / "tpg_loss.csv"
        save_net(ck, net)
        save_loss_curve(curve_path, curves[name])
        outputs += [ck, curve_path]
        print(f"tpg: {sets[name].size} clips ({sets[name].positives} positive)")
    _write_run_record(out_dir, "train-tpg", cfg, outputs)
    return 0


def cmd_train_det(cfg: ExperimentConfig) -> int:
    out_dir, manifest, streams = _prepare(cfg)
    sets = build_training_set(
        manifest, streams, cfg.spec(), cfg.sample_cfg(), cfg.window_cfg(),
        fusion=cfg.fusion_mode(),
    )
    nets, curves = train_stage(sets, manifest.class_count, cfg.train_cfg(), cfg.hidden)
    outputs = []
    for name, net in nets.items():
        ck, curve_path = out_dir / f"det_{name}.tln", out_dir / f"det_{name}_loss.csv"
        save_net(ck, net)
        save_loss_curve(curve_path, curves[name])
        outputs += [ck, curve_path]
        print(f"det[{name}]: {sets[name].size} clips "
              f"({sets[name].positives} positive)")
    _write_run_record(out_dir, "train-det", cfg, outputs)
    return 0


def _load_checkpoint(path: Path, expected_n_f: int):
    net = load_net(path)
    if net.n_f != expected_n_f:
        raise DataError(
            f"checkpoint {path.name} expects {net.n_f} inputs but the "
            f"representation yields {expected_n_f}"
        )
    return net


def cmd_detect(cfg: ExperimentConfig) -> int:
    out_dir, manifest, streams = _prepare(cfg)
    spec = cfg.spec()
    some_video = next(iter(streams.values()))
    tpg_net = _load_checkpoint(
        out_dir / "tpg.tln", repr_output_dim(spec, tpg_view(some_video).dim)
    )
    proposals = generate_proposals(
        streams, tpg_net, spec, cfg.window_cfg(), cfg.an, cfg.proposal_nms
    )
    det_nets = {
        name: _load_checkpoint(out_dir / f"det_{name}.tln", repr_output_dim(spec, seq.dim))
        for name, seq in det_views(some_video, cfg.fusion_mode())
    }
    detections = run_detection(
        streams, det_nets, proposals, spec, cfg.cascade_cfg(), cfg.fusion_mode(),
        cfg.detection_nms,
    )
    prop_path, det_path = out_dir / "proposals.jsonl", out_dir / "detections.jsonl"
    flat = [p for v in sorted(proposals) for p in proposals[v]]
    save_proposals(prop_path, flat)
    save_detections(det_path, detections)
    _write_run_record(out_dir, "detect", cfg, [prop_path, det_path])
    print(f"{len(flat)} proposals -> {len(detections)} detections")
    return 0


def cmd_eval(cfg: ExperimentConfig, detections_path: str | None, min_map: float | None) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(cfg.manifest)
    det_path = Path(detections_path) if detections_path else out_dir / "detections.jsonl"
    detections = load_detections(det_path)
    report = map_at(detections, manifest.annotations, tuple(cfg.thresholds))
    (out_dir / "report.txt").write_text(report.text_table() + "\n")
    (out_dir / "report.csv").write_text(report.csv())
    _write_run_record(out_dir, "eval", cfg, [out_dir / "report.txt", out_dir / "report.csv"])
    print(report.text_table())
    if min_map is not None:
        gate = report.map_by_threshold[cfg.thresholds[0]]
        if gate < min_map:
            print(f"mAP@{cfg.thresholds[0]:g} = {gate:.4f} below gate {min_map:g}",
                  file=sys.stderr)
            return 3
    return 0


_ABLATE_FIELD = {
    "k": "repr",
    "repr": "repr",
    "cascade": "cascade_steps",
    "fusion": "fusion",
    "an": "an",
}

_ABLATE_DEFAULTS = {
    "k": ["1", "5"],
    "repr": ["kpart:5", "stpp:1,2", "bsp:2/4"],
    "cascade": ["1", "3"],
    "fusion": ["early", "late"],
    "an": ["100", "500"],
}


def _arm_config(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    if axis == "k":
        patch = {"repr": f"kpart:{int(value)}"}
    elif axis == "cascade":
        patch = {"cascade_steps": int(value)}
    elif axis == "an":
        patch = {"an": float(value)}
    else:
        patch = {_ABLATE_FIELD[axis]: value}
    tag = value.replace(":", "-").replace("/", "-").replace(",", "-")
    arm_dir = str(Path(cfg.out_dir) / f"{axis}_{tag}")
    return dataclasses.replace(cfg, out_dir=arm_dir, **patch)


def _assert_single_axis(base: ExperimentConfig, arms: list[ExperimentConfig], axis: str) -> None:
    skip = {_ABLATE_FIELD[axis], "out_dir"}
    for arm in arms:
        for f in dataclasses.fields(ExperimentConfig):
            if f.name in skip:
                continue
            if getattr(arm, f.name) != getattr(base, f.name):
                raise UsageError(
                    f"ablation over {axis} must hold {f.name} fixed"
                )


def _run_arm(arm: ExperimentConfig):
    out_dir, manifest, streams = _prepare(arm)
    spec = arm.spec()
    tpg_sets = build_training_set(
        manifest, streams, spec, arm.sample_cfg(), arm.window_cfg(), binary=True
    )
    tpg_nets, _ = train_stage(tpg_sets, 1, arm.train_cfg(), arm.hidden)
    proposals = generate_proposals(
        streams, tpg_nets["tpg"], spec, arm.window_cfg(), arm.an, arm.proposal_nms
    )
    det_sets = build_training_set(
        manifest, streams, spec, arm.sample_cfg(), arm.window_cfg(),
        fusion=arm.fusion_mode(),
    )
    det_nets, _ = train_stage(det_sets, manifest.class_count, arm.train_cfg(), arm.hidden)
    detections = run_detection(
        streams, det_nets, proposals, spec, arm.cascade_cfg(), arm.fusion_mode(),
        arm.detection_nms,
    )
    save_detections(out_dir / "detections.jsonl", detections)
    report = evaluate_detections(detections, manifest, tuple(arm.thresholds))
    (out_dir / "report.txt").write_text(report.text_table() + "\n")
    (out_dir / "report.csv").write_text(report.csv())
    _write_run_record(out_dir, "ablate-arm", arm, [out_dir / "detections.jsonl"])
    return report


def cmd_ablate(cfg: ExperimentConfig, axis: str, values: list[str] | None) -> int:
    if axis not in _ABLATE_FIELD:
        raise UsageError(f"unknown ablation axis {axis!r}")
    values = values or _ABLATE_DEFAULTS[axis]
    arms = [_arm_config(cfg, axis, v) for v in values]
    _assert_single_axis(cfg, arms, axis)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, arm in zip(values, arms):
        report = _run_arm(arm)
        rows.append((value, report))
        print(f"{axis}={value}: " + ", ".join(
            f"mAP@{t:g}={100 * report.map_by_threshold[t]:.2f}"
            for t in arm.thresholds
        ))
    lines = [f"{axis}," + ",".join(f"{t:g}" for t in cfg.thresholds)]
    for value, report in rows:
        lines.append(value + "," + ",".join(
            repr(report.map_by_threshold[t]) for t in cfg.thresholds
        ))
    (out_dir / f"ablate_{axis}.csv").write_text("\n".join(lines) + "\n")
    _write_run_record(out_dir, f"ablate-{axis}", cfg, [out_dir / f"ablate_{axis}.csv"])
    return 0


def cmd_param_count(dim: int, classes: int) -> int:
    rows = param_table(dim, classes)
    width = max(len(label) for label, _ in rows)
    print(f"{'config'.ljust(width)}  params(M)")
    for label, count in rows:
        print(f"{label.ljust(width)}  {count / 1e6:9.2f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="talkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML config file")
        return p

    with_config("gen-synth", "generate the synthetic benchmark dataset")
    with_config("train-tpg", "train the binary proposal head")
    with_config("train-det", "train the multi-class detection head(s)")
    with_config("detect", "run proposals + cascade over the dataset")
    p = with_config("eval", "score a detections file against ground truth")
    p.add_argument("--detections", help="detections JSONL (default <out_dir>/detections.jsonl)")
    p.add_argument("--min-map", type=float, help="fail (exit 3) when mAP at the "
                   "first threshold is below this value")
    p = with_config("ablate", "sweep one axis, all else fixed")
    p.add_argument("--axis", required=True, choices=sorted(_ABLATE_FIELD))
    p.add_argument("--values", help="comma-separated axis values")
    p = sub.add_parser("param-count", help="head sizes for the reference configurations")
    p.add_argument("--dim", type=int, default=4096)
    p.add_argument("--classes", type=int, default=20)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "param-count":
            return cmd_param_count(args.dim, args.classes)
        cfg = load_config(args.config)
        if args.command == "gen-synth":
            return cmd_gen_synth(cfg)
        if args.command == "train-tpg":
            return cmd_train_tpg(cfg)
        if args.command == "train-det":
            return cmd_train_det(cfg)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.detections, args.min_map)
        if args.command == "ablate":
            values = args.values.split(",") if args.values else None
            return cmd_ablate(cfg, args.axis, values)
        raise UsageError(f"unhandled command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""End-to-end run on a freshly generated synthetic dataset.

Generates the dataset, trains the proposal and detection heads, runs the
cascade over scored sliding-window proposals, and prints the mAP table.
Desk-scale settings by default (finishes in about a minute); raise
--iterations / --videos for slower, stronger runs.
"""

import argparse
import tempfile
import time

from talkit.core import ReprSpec
from talkit.detector import CascadeConfig, FusionMode
from talkit.features import SynthConfig, generate_synthetic
from talkit.net import TrainConfig
from talkit.pipeline import (
    SampleConfig,
    build_training_set,
    evaluate_detections,
    generate_proposals,
    load_streams,
    run_detection,
    train_stage,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", help="dataset directory (default: temporary)")
    ap.add_argument("--videos", type=int, default=40)
    ap.add_argument("--units", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--repr", default="kpart:5")
    ap.add_argument("--fusion", default="early", choices=["rgb", "flow", "early", "late"])
    ap.add_argument("--steps", type=int, default=3)
    ap.add_argument("--an", type=float, default=20.0)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--iterations", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = args.out or tempfile.mkdtemp(prefix="talkit-synth-")
    t0 = time.time()
    manifest = generate_synthetic(
        SynthConfig(num_videos=args.videos, units_per_video=args.units,
                    noise_std=args.noise, seed=args.seed),
        out,
    )
    streams = load_streams(manifest)
    print(f"dataset: {len(manifest.videos)} videos, {len(manifest.annotations)} "
          f"actions -> {out}")

    spec = ReprSpec.parse(args.repr)
    fusion = FusionMode(args.fusion)
    tcfg = TrainConfig(learning_rate=0.01, iterations=args.iterations,
                       lr_decay_at=(int(args.iterations * 0.8),), seed=args.seed)
    scfg = SampleConfig(seed=args.seed, max_jitter=4.0, gt_copies=4)

    tpg_sets = build_training_set(manifest, streams, spec, scfg, binary=True)
    tpg_nets, _ = train_stage(tpg_sets, 1, tcfg, args.hidden)
    print(f"proposal head trained on {tpg_sets['tpg'].size} clips "
          f"({tpg_sets['tpg'].positives} positive)  [{time.time() - t0:.0f}s]")

    proposals = generate_proposals(streams, tpg_nets["tpg"], spec, an=args.an)
    n_props = sum(len(v) for v in proposals.values())

    det_sets = build_training_set(manifest, streams, spec, scfg, fusion=fusion)
    det_nets, _ = train_stage(det_sets, manifest.class_count, tcfg, args.hidden)
    detections = run_detection(
        streams, det_nets, proposals, spec,
        CascadeConfig(steps=args.steps), fusion,
    )
    print(f"{n_props} proposals -> {len(detections)} detections "
          f"[{time.time() - t0:.0f}s]")

    report = evaluate_detections(detections, manifest)
    print(report.text_table())


if __name__ == "__main__":
    main()

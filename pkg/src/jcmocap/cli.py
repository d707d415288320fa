"""Command-line pipeline: simulate, build-cloud, train-toy, infer, evaluate.

Every command honors ``--seed`` (falling back to the ``JCM_SEED``
environment variable, then 0) and writes byte-identical artifacts when
repeated with the same seed.  Exit codes: 0 success, 2 I/O failure,
3 input-contract violation, 4 checkpoint/config mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .geometry import CameraView, load_calibration, save_calibration
from .jointcloud import (
    InsufficientCandidates, ThresholdTable, TooFewViews,
    build_window_clouds, group_by_frame, load_detections, read_cloud,
    save_detections, write_cloud,
)
from .losses import total_loss
from .metrics import evaluate
from .model import (
    CandidateSelectionTransformer, CheckpointError, ConfigMismatch,
    MaskingConfig, ModelConfig, SkeletonSequence, StreamTooShort,
    load_checkpoint, load_skeletons, save_checkpoint, save_skeletons,
    sliding_window_infer, window_offsets,
)
from .skeleton import BODY25_TO_SHELF15, get_format, load_limb_spec, asset_path
from .synthetic import (
    CorruptionConfig, SceneConfig, corrupt_detections, generate_scene,
)
from .training import (
    MaskingConfig as _MaskingConfig, TrainConfig, evaluate_windows_mpjpe,
    prepare_sample, train, windows_from_scene,
)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("JCM_SEED")
    return int(env) if env else 0


def cmd_simulate(args, seed: int) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SceneConfig(
        persons=args.persons, views=args.views, frames=args.frames,
        motion_amplitude=args.motion_amplitude, seed=seed,
        corruption=CorruptionConfig(
            pixel_noise_std=args.pixel_noise,
            id_swap_prob=args.id_swap,
            type_swap_prob=args.type_swap,
            dropout_prob=args.dropout,
        ),
    )
    gt, cams, dets = generate_scene(cfg)
    dets, stats = corrupt_detections(dets, cfg.corruption, seed=seed + 1)
    save_calibration(cams, out / "calibration.json")
    save_detections(dets, out / "detections.jsonl")
    sequences = [
        SkeletonSequence(person_id=m, frames=gt[m], reconstructed=None,
                         joint_format=cfg.joint_format)
        for m in range(cfg.persons)
    ]
    save_skeletons(sequences, out / "gt.json")
    print(
        f"simulate: {cfg.persons} persons, {cfg.views} views, "
        f"{cfg.frames} frames -> {out} "
        f"(type swaps {stats.type_swap_events}, id swaps {stats.id_swap_events}, "
        f"dropouts {stats.dropout_events})"
    )
    return 0


def cmd_build_cloud(args, seed: int) -> int:
    cams = load_calibration(args.calibration)
    if len(cams) < 2:
        raise TooFewViews(f"calibration holds {len(cams)} view(s), need >= 2")
    dets = load_detections(args.detections)
    frames = group_by_frame(dets)
    thresholds = (ThresholdTable.from_json(args.thresholds)
                  if args.thresholds else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    offsets = window_offsets(len(frames), args.window, args.stride)
    all_stats = []
    n_files = 0
    for offset in offsets:
        clouds, stats = build_window_clouds(
            frames[offset:offset + args.window], cams, thresholds=thresholds,
            cap=args.cap, seed=seed, start_frame=offset,
        )
        stats["start_frame"] = offset
        all_stats.append(stats)
        for cloud in clouds:
            path = out / f"cloud_w{offset:04d}_p{cloud.person_id}.jcd"
            write_cloud(cloud, path)
            n_files += 1
    with open(out / "stats.json", "w") as fh:
        json.dump({"windows": all_stats}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"build-cloud: {len(offsets)} windows -> {n_files} cloud files in {out}")
    return 0


def _eval_loss(model, windows, cams, limbs) -> float:
    no_mask = MaskingConfig(enabled=False)
    total = 0.0
    with torch.no_grad():
        for w in windows:
            cloud, gt = prepare_sample(w, no_mask, False, np.random.default_rng(0))
            pred, _, _ = model(
                torch.as_tensor(cloud.data).unsqueeze(0),
                torch.as_tensor(cloud.mask).unsqueeze(0),
            )
            total += float(total_loss(pred[0], torch.as_tensor(gt), cams, limbs))
    return total / max(len(windows), 1)


def cmd_train_toy(args, seed: int) -> int:
    cams = load_calibration(args.calibration)
    if len(cams) < 2:
        raise TooFewViews(f"calibration holds {len(cams)} view(s), need >= 2")
    dets = load_detections(args.detections)
    frames = group_by_frame(dets)
    gt_seqs = load_skeletons(args.gt)
    gt = np.stack([s.frames for s in gt_seqs])

    n_pairs = len(cams) * (len(cams) - 1) // 2
    mcfg = ModelConfig.toy(
        n_frames=args.window, n_view_pairs=n_pairs, n_candidates=args.cap,
        n_joint_types=get_format(gt_seqs[0].joint_format).n_joints,
        joint_mid=20, joint_out=15, width=args.width, depth=args.depth,
        out_mapping=BODY25_TO_SHELF15,
    )
    windows = windows_from_scene(frames, cams, gt, mcfg, stride=args.stride,
                                 seed=seed)
    if args.holdout > 0:
        starts = sorted({w.cloud.start_frame for w in windows})
        held_starts = set(starts[-args.holdout:])
        train_w = [w for w in windows if w.cloud.start_frame not in held_starts]
        held_w = [w for w in windows if w.cloud.start_frame in held_starts]
    else:
        train_w, held_w = windows, []

    limbs = load_limb_spec(asset_path("limbs_shelf15.json"))
    model = CandidateSelectionTransformer(mcfg, seed=seed)
    tcfg = TrainConfig(
        steps=args.steps, batch_size=args.batch, base_lr=args.base_lr,
        warmup_fraction=args.warmup_fraction, seed=seed,
        masking=_MaskingConfig(ratio_range=(args.mask_lo, args.mask_hi),
                               enabled=not args.no_masking),
        augment=not args.no_augment,
        literal_normalization=args.literal_normalization,
        projected_pcp=args.projected_pcp,
    )
    initial = _eval_loss(model, train_w, cams, limbs)
    history = train(model, train_w, cams, limbs, tcfg)
    final = _eval_loss(model, train_w, cams, limbs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.jcmc", model, seed=seed, extra={
        "initial_eval_loss": initial, "final_eval_loss": final,
    })
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "batch_loss"])
        for row in history:
            writer.writerow([row["step"], f"{row['lr']:.10g}", f"{row['loss']:.10g}"])
        writer.writerow(["eval_initial", "", f"{initial:.10g}"])
        writer.writerow(["eval_final", "", f"{final:.10g}"])
    msg = (f"train-toy: {args.steps} steps, eval loss {initial:.2f} -> {final:.2f}"
           f" (ratio {final / initial:.3f})")
    if held_w:
        msg += f"; held-out MPJPE {evaluate_windows_mpjpe(model, held_w):.1f} mm"
    print(msg)
    return 0


def cmd_infer(args, seed: int) -> int:
    model, _manifest = load_checkpoint(args.checkpoint)
    if args.cloud:
        from .model import center_cloud
        cloud = read_cloud(args.cloud)
        centered, center = center_cloud(cloud)
        seq = model.predict(centered)
        seq.frames = seq.frames + center * seq.reconstructed[..., None]
        sequences = [seq]
    else:
        if not args.detections or not args.calibration:
            raise ConfigMismatch(
                "infer needs either --cloud or --detections + --calibration"
            )
        cams = load_calibration(args.calibration)
        if len(cams) < 2:
            raise TooFewViews(f"calibration holds {len(cams)} view(s), need >= 2")
        dets = load_detections(args.detections)
        frames = group_by_frame(dets)
        sequences, _stats = sliding_window_infer(
            frames, cams, model, stride=args.stride, seed=seed,
        )
    save_skeletons(sequences, args.out)
    flagged = sum(int((~s.reconstructed).sum()) for s in sequences)
    print(f"infer: {len(sequences)} person(s) -> {args.out} "
          f"({flagged} joint slots unreconstructed)")
    return 0


def cmd_evaluate(args, seed: int) -> int:
    preds = load_skeletons(args.pred)
    gts = load_skeletons(args.gt)
    pred_fmt = preds[0].joint_format if preds else "shelf15"
    for g in gts:
        if g.joint_format == "body25" and pred_fmt == "shelf15":
            g.frames = g.frames[:, list(BODY25_TO_SHELF15)]
            g.reconstructed = g.reconstructed[:, list(BODY25_TO_SHELF15)]
            g.joint_format = "shelf15"
    limbs = (load_limb_spec(args.limbs) if args.limbs
             else load_limb_spec(asset_path(f"limbs_{pred_fmt}.json")))
    report = evaluate(preds, gts, limbs, threshold=args.threshold)
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    print(report.to_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jcmocap",
        description="Multi-view multi-person motion capture from "
                    "redundant triangulated joint candidates.",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="run seed (default: $JCM_SEED or 0)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker thread cap (default 1, reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--persons", type=int, default=2)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--motion-amplitude", type=float, default=0.25)
    p.add_argument("--pixel-noise", type=float, default=0.0)
    p.add_argument("--id-swap", type=float, default=0.0)
    p.add_argument("--type-swap", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-cloud", help="construct candidate tensors")
    p.add_argument("--detections", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--cap", type=int, default=4)
    p.add_argument("--thresholds", default=None)
    p.set_defaults(func=cmd_build_cloud)

    p = sub.add_parser("train-toy", help="train a small model on a scene")
    p.add_argument("--detections", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--base-lr", type=float, default=0.5)
    p.add_argument("--warmup-fraction", type=float, default=0.1)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--cap", type=int, default=4)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--holdout", type=int, default=0,
                   help="hold out the last K window offsets")
    p.add_argument("--mask-lo", type=float, default=0.0)
    p.add_argument("--mask-hi", type=float, default=0.5)
    p.add_argument("--no-masking", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--literal-normalization", action="store_true")
    p.add_argument("--projected-pcp", action="store_true")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("infer", help="reconstruct skeletons")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--detections", default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--cloud", default=None,
                   help="predict directly from one cloud dump")
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--limbs", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(args.threads, 1))
    seed = _resolve_seed(args)
    try:
        return args.func(args, seed)
    except (CheckpointError, ConfigMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (TooFewViews, InsufficientCandidates, StreamTooShort, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

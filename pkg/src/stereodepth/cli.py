"""Command-line interface.

Subcommands: infer (stereo pair -> disparity/confidence/point cloud),
train (synthetic dataset directory -> weights file), eval (prediction vs
ground truth metrics as JSON), synth (generate a labeled dataset), and
cloud (disparity map -> PLY point cloud).

Exit codes: 0 success, 1 invalid inputs or processing errors, 2 missing
files (the message names the path). STEREO_THREADS caps kernel
parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import formats as F
from . import geometry as G
from . import loss as LO
from . import metrics as MET
from . import model as M
from . import postproc as P
from . import synth as SY
from . import tensor as T
from . import train as TR
from .tensor import Tensor


def _load_image(path) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        return F.read_ppm(path)
    if ext == ".pgm":
        gray = F.read_pgm(path).astype(np.float32) / 255.0
        return np.ascontiguousarray(np.broadcast_to(gray, (3, *gray.shape)))
    raise ValueError(f"unsupported image format {ext!r} (expected .ppm or .pgm): {path}")


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected WxH, got {text!r}")
    w, h = int(parts[0]), int(parts[1])
    if w < 1 or h < 1:
        raise ValueError(f"size must be positive, got {text!r}")
    return w, h


def _pad_amounts(n: int, scale: int) -> tuple[int, int]:
    extra = (-n) % scale
    return extra // 2, extra - extra // 2


def cmd_infer(args) -> int:
    left = _load_image(args.left)
    right = _load_image(args.right)
    if left.shape != right.shape:
        raise ValueError(f"left/right dimensions differ: {left.shape} vs {right.shape}")
    if not os.path.exists(args.weights):
        raise FileNotFoundError(args.weights)
    weights = M.load_weights(args.weights)
    config = M.config_from_weights(weights, ndisp=args.ndisp, cv_scale=args.cv_scale)

    start = time.perf_counter()
    _, h, w = left.shape
    top, bottom = _pad_amounts(h, config.cv_scale)
    lead, trail = _pad_amounts(w, config.cv_scale)
    padded = (top, bottom, lead, trail)
    if any(padded):
        pad_spec = ((0, 0), (top, bottom), (lead, trail))
        left = np.pad(left, pad_spec)
        right = np.pad(right, pad_spec)

    pair = M.StereoPair(Tensor(left), Tensor(right))
    with T.no_grad():
        out = M.forward(pair, weights, config)
    d_hr = out.d_hr.data[top:top + h, lead:lead + w]
    conf_lr = P.confidence_from_matchability(out.matchability.data).values
    conf = P.nearest_upsample(conf_lr, config.cv_scale)[top:top + h, lead:lead + w]

    F.write_pfm_file(args.out_disp, d_hr)
    if args.out_conf:
        F.write_pfm_file(args.out_conf, conf.astype(np.float32))

    valid_fraction = 1.0
    filtered = None
    if args.filtered:
        filtered = P.filter_disparity(d_hr, conf, conf_threshold=args.conf_thresh,
                                      min_region=args.min_region)
        valid_fraction = filtered.valid_fraction
        masked = d_hr.copy()
        masked[~filtered.valid] = np.nan
        stem, ext = os.path.splitext(args.out_disp)
        F.write_pfm_file(f"{stem}.filtered{ext or '.pfm'}", masked)

    if args.ply:
        fx = args.fx if args.fx is not None else float(
            (w / 2.0) / np.tan(np.deg2rad(100.0) / 2.0))
        rig = G.CameraRig(fx=fx, fy=fx, cx=w / 2.0, cy=h / 2.0,
                          baseline=args.baseline, width=w, height=h)
        source = filtered if filtered is not None else G.disparity_to_depth(d_hr, rig)
        cloud = G.depth_to_points(source, rig, color=left[:, top:top + h, lead:lead + w])
        G.write_ply_file(args.ply, cloud)

    print(json.dumps({
        "width": w, "height": h, "ndisp": args.ndisp, "cv_scale": args.cv_scale,
        "valid_fraction": valid_fraction,
        "wall_time_s": round(time.perf_counter() - start, 4),
        "padding": list(padded),
    }))
    return 0


AUGMENT_NAMES = {"flip": "flip", "jitter": "color_jitter", "noise": "noise", "blur": "blur"}


def cmd_train(args) -> int:
    if not os.path.isdir(args.data):
        raise FileNotFoundError(args.data)
    dataset = SY.load_dataset(args.data)
    crop_w, crop_h = _parse_size(args.crop)
    flags = {}
    if args.augment:
        for name in args.augment.split(","):
            key = AUGMENT_NAMES.get(name.strip().lower())
            if key is None:
                raise ValueError(f"unknown augmentation {name!r} "
                                 f"(expected {','.join(AUGMENT_NAMES)})")
            flags[key] = True

    model_cfg = M.ModelConfig(ndisp=args.ndisp, cv_scale=args.cv_scale,
                              feat_channels=args.feat_channels,
                              agg_3d_channels=(8, 4), agg_2d_blocks=2,
                              refine_channels=8)
    train_cfg = TR.TrainConfig(lr0=args.lr, epochs=args.epochs, batch_size=args.batch,
                               crop_h=crop_h, crop_w=crop_w, seed=args.seed, **flags)
    log_stream = open(args.log, "w") if args.log else sys.stdout
    try:
        weights, _ = TR.train_model(dataset, model_cfg, LO.LossConfig(), train_cfg,
                                    log_stream=log_stream)
    finally:
        if args.log:
            log_stream.close()
    M.save_weights(weights, args.out_weights)
    return 0


def _mask_from_file(path) -> np.ndarray:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return F.read_pgm(path) > 127
    if ext == ".pfm":
        arr, _ = F.read_pfm(path)
        return np.isfinite(arr) & (arr > 0.5)
    raise ValueError(f"unsupported mask format {ext!r}: {path}")


def _eval_pairs(args):
    if os.path.isdir(args.pred) != os.path.isdir(args.gt):
        raise ValueError("--pred and --gt must both be files or both directories")
    if not os.path.isdir(args.pred):
        mask = [args.mask] if args.mask else [None]
        return [(args.pred, args.gt, mask[0])]
    names = sorted(n for n in os.listdir(args.pred) if n.endswith(".pfm"))
    if not names:
        raise FileNotFoundError(f"no .pfm predictions in {args.pred}")
    pairs = []
    for name in names:
        gt_path = os.path.join(args.gt, name)
        if not os.path.exists(gt_path):
            raise FileNotFoundError(gt_path)
        mask_path = None
        if args.mask:
            for ext in (".pgm", ".pfm"):
                candidate = os.path.join(args.mask, os.path.splitext(name)[0] + ext)
                if os.path.exists(candidate):
                    mask_path = candidate
                    break
            if mask_path is None:
                raise FileNotFoundError(os.path.join(args.mask, name))
        pairs.append((os.path.join(args.pred, name), gt_path, mask_path))
    return pairs


def cmd_eval(args) -> int:
    thresholds = tuple(float(t) for t in args.thresholds.split(","))
    preds, gts, masks = [], [], []
    pairs = _eval_pairs(args)
    for pred_path, gt_path, mask_path in pairs:
        for p in (pred_path, gt_path):
            if not os.path.exists(p):
                raise FileNotFoundError(p)
        pred, _ = F.read_pfm(pred_path)
        gt, _ = F.read_pfm(gt_path)
        mask = np.isfinite(pred) & np.isfinite(gt)
        if mask_path:
            mask &= _mask_from_file(mask_path)
        preds.append(pred.ravel())
        gts.append(gt.ravel())
        masks.append(mask.ravel())
    report = MET.compute_metrics(np.concatenate(preds), np.concatenate(gts),
                                 np.concatenate(masks), thresholds)
    payload = report.as_dict()
    payload["n_frames"] = len(pairs)
    print(json.dumps(payload))
    return 0


def cmd_synth(args) -> int:
    width, height = _parse_size(args.size)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        scene = SY.random_scene(seed=args.seed + i, width=width, height=height,
                                ndisp=args.ndisp)
        SY.save_sample(args.out, i, SY.synth_pair(scene))
    print(json.dumps({"count": args.count, "width": width, "height": height,
                      "ndisp": args.ndisp, "out": args.out}))
    return 0


def cmd_cloud(args) -> int:
    if not os.path.exists(args.disp):
        raise FileNotFoundError(args.disp)
    disp, _ = F.read_pfm(args.disp)
    h, w = disp.shape
    rig = G.CameraRig(fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy,
                      baseline=args.baseline, width=w, height=h)
    depth = G.disparity_to_depth(disp, rig)
    cloud = G.depth_to_points(depth, rig)
    voxels = None
    if args.voxel is not None:
        voxels = G.voxelize(cloud, args.voxel)
        cloud = G.voxel_centers(voxels, args.voxel)
    G.write_ply_file(args.out, cloud)
    print(json.dumps({"points": len(cloud), "voxel": args.voxel,
                      "voxels": None if voxels is None else len(voxels),
                      "out": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereodepth",
                                     description="Learned stereo depth toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="run the matching network on a rectified pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--ndisp", type=int, required=True)
    p.add_argument("--cv-scale", type=int, choices=(4, 8), required=True)
    p.add_argument("--out-disp", required=True)
    p.add_argument("--out-conf")
    p.add_argument("--filtered", action="store_true")
    p.add_argument("--conf-thresh", type=float, default=P.CONF_THRESHOLD)
    p.add_argument("--min-region", type=int, default=P.MIN_REGION_PX)
    p.add_argument("--ply")
    p.add_argument("--fx", type=float)
    p.add_argument("--baseline", type=float, default=0.1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train on a synthetic dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--crop", required=True, help="WxH")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-weights", required=True)
    p.add_argument("--augment", help="comma list: flip,jitter,noise,blur")
    p.add_argument("--ndisp", type=int, default=16)
    p.add_argument("--cv-scale", type=int, choices=(4, 8), default=4)
    p.add_argument("--feat-channels", type=int, default=8)
    p.add_argument("--log", help="write the epoch log here instead of stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask")
    p.add_argument("--thresholds", default="1.0,2.0,4.0")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", required=True, help="WxH")
    p.add_argument("--ndisp", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cloud", help="convert a disparity PFM to a PLY point cloud")
    p.add_argument("--disp", required=True)
    p.add_argument("--fx", type=float, required=True)
    p.add_argument("--fy", type=float, required=True)
    p.add_argument("--cx", type=float, required=True)
    p.add_argument("--cy", type=float, required=True)
    p.add_argument("--baseline", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--voxel", type=float, nargs="?", const=0.02)
    p.set_defaults(func=cmd_cloud)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.args[0] if e.args else e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

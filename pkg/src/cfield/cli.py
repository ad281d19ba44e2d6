"""Command-line interface.

Subcommands: gen-scene, derive-masks, train, render, eval. Every command is
deterministic under a fixed seed, writes all artifacts under --out, and
leaves exactly one manifest.json there describing the resolved
configuration. Heavy imports happen after --threads / CFIELD_THREADS is
applied so the BLAS worker cap takes effect.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import (ConfigurationError, DatasetError, InputDomainError,
                     InvalidStateError)

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS")


def _apply_thread_cap(argv: list[str]) -> None:
    threads = os.environ.get("CFIELD_THREADS")
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif a.startswith("--threads="):
            threads = a.split("=", 1)[1]
    if threads:
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, str(threads))


def _write_manifest(out_dir: Path, command: str, config: dict, seed, artifacts: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": artifacts,
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_scene(args) -> int:
    import numpy as np

    from .imgio import write_pfm
    from .geometry import Intrinsics
    from .scene import (DepthCorruption, corrupt_depth, orbit_rig, preset_scene,
                        render_oracle, save_dataset)

    scene = preset_scene(args.preset)
    focal = args.focal if args.focal is not None else float(args.res)
    intr = Intrinsics(fx=focal, fy=focal, cx=args.res / 2.0, cy=args.res / 2.0,
                      width=args.res, height=args.res)
    rig = orbit_rig(intr, args.train_views, args.test_views, args.radius, args.height,
                    arc=float(np.radians(args.arc_degrees)))

    out = _out_dir(args)
    frames = []
    oracle_depths = []
    for camera, split in rig:
        frame = render_oracle(scene, camera)
        frame.split = split
        oracle_depths.append(frame.depth)
        if split == "train" and (args.depth_scale != 1.0 or args.depth_noise > 0.0):
            corruption = DepthCorruption(global_scale=args.depth_scale,
                                         multiplicative_noise_std=args.depth_noise,
                                         seed=args.seed + len(frames))
            frame.depth = corrupt_depth(frame.depth, corruption)
        frames.append(frame)
    save_dataset(frames, out)

    corrupted = args.depth_scale != 1.0 or args.depth_noise > 0.0
    if corrupted:
        # Keep the uncorrupted depths around for analysis.
        for i, depth in enumerate(oracle_depths):
            write_pfm(out / f"frame_{i:03d}_depth_oracle.pfm",
                      np.where(depth.validity, depth.values, 0.0))

    _write_manifest(
        out, "gen-scene",
        {"preset": args.preset, "train_views": args.train_views, "test_views": args.test_views,
         "res": args.res, "focal": focal, "radius": args.radius, "height": args.height,
         "arc_degrees": args.arc_degrees,
         "depth_scale": args.depth_scale, "depth_noise": args.depth_noise},
        args.seed,
        {"dataset": "dataset.json", "frames": len(frames),
         "oracle_depths": corrupted},
    )
    return 0


def cmd_derive_masks(args) -> int:
    from .correspondence import MaskConfig, derive_mask, save_mask, subsample_mask
    from .scene import load_dataset

    frames = [f for f in load_dataset(args.data) if f.split == "train"]
    if any(f.depth is None for f in frames):
        raise ConfigurationError("all training frames need depth maps to derive masks")
    config = MaskConfig(alpha=args.alpha, portion=args.portion)

    out = _out_dir(args)
    coverages = []
    for i, frame in enumerate(frames):
        others = [(g.camera, g.depth) for j, g in enumerate(frames) if j != i]
        mask = derive_mask((frame.camera, frame.depth), others, config)
        if args.portion < 1.0:
            mask = subsample_mask(mask, args.portion, seed=args.seed * 100003 + i)
        save_mask(mask, out / f"mask_{i:03d}.png", config, seed=args.seed)
        coverages.append(mask.coverage)

    report = {
        "alpha": args.alpha,
        "portion": args.portion,
        "seed": args.seed,
        "per_frame_coverage": coverages,
        "mean_coverage": sum(coverages) / len(coverages) if coverages else 0.0,
    }
    (out / "coverage.json").write_text(json.dumps(report, indent=2))
    _write_manifest(out, "derive-masks",
                    {"data": str(args.data), "alpha": args.alpha, "portion": args.portion},
                    args.seed,
                    {"coverage": "coverage.json", "masks": len(coverages)})
    return 0


def _train_config(args):
    from .correspondence import MaskConfig
    from .field import EncodingConfig, FieldConfig
    from .losses import LossWeights
    from .trainer import TrainConfig

    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())

    def pick(name, flag_value, default):
        if flag_value is not None:
            return flag_value
        return overrides.get(name, default)

    mode = pick("mode", args.mode, "full")
    if mode == "multiview":
        mode = "multiview_only"
    if mode == "singleview":
        mode = "singleview_only"

    encoding = EncodingConfig(
        position_frequencies=int(pick("position_frequencies", args.pos_freqs, 6)),
        direction_frequencies=int(pick("direction_frequencies", args.dir_freqs, 2)),
    )
    field_config = FieldConfig(
        hidden_layers=int(pick("hidden_layers", args.hidden_layers, 3)),
        hidden_width=int(pick("hidden_width", args.hidden_width, 64)),
        density_activation=pick("density_activation", args.density_activation, "relu"),
        bias_init=pick("bias_init", args.bias_init, "uniform01"),
        encoding=encoding,
        skip_connection_layer=None,
    )
    return TrainConfig(
        iterations=int(pick("iterations", args.iterations, 5000)),
        rays_per_batch=int(pick("rays_per_batch", args.rays_per_batch, 512)),
        patches_per_batch=int(pick("patches_per_batch", args.patches_per_batch, 4)),
        learning_rate=float(pick("learning_rate", args.lr, 5e-4)),
        lr_decay=float(pick("lr_decay", None, 0.1)),
        mask_config=MaskConfig(alpha=float(pick("alpha", args.alpha, 0.1)),
                               portion=float(pick("portion", args.portion, 1.0))),
        loss_weights=LossWeights(
            lambda_offmask=float(pick("lambda_offmask", args.lambda_offmask, 0.1)),
            beta_depth=float(pick("beta_depth", args.beta_depth, 0.1)),
            patch_size=int(pick("patch_size", args.patch_size, 8)),
        ),
        mode=mode,
        seed=args.seed,
        field_config=field_config,
        samples_per_ray=int(pick("samples_per_ray", args.samples_per_ray, 32)),
        t_near=pick("t_near", args.near, None),
        t_far=pick("t_far", args.far, None),
        eval_every=int(pick("eval_every", args.eval_every, 500)),
    )


def cmd_train(args) -> int:
    from dataclasses import asdict

    from .scene import load_dataset
    from .trainer import run_training

    config = _train_config(args)
    dataset = load_dataset(args.data)
    out = _out_dir(args)
    run_training(config, dataset, out_dir=out)
    _write_manifest(out, "train",
                    {"data": str(args.data), **asdict(config)},
                    args.seed,
                    {"checkpoint": "checkpoint.bin", "header": "checkpoint.json",
                     "log": "trainlog.csv"})
    return 0


def _load_for_inference(args):
    from .field import load_params
    from .renderer import SamplingConfig
    from .scene import load_dataset, scene_bounds

    frames = load_dataset(args.data)
    params = load_params(args.checkpoint)
    selected = [f for f in frames if f.split == args.split]
    if not selected:
        raise ConfigurationError(f"no frames in split {args.split!r}")
    near, far = scene_bounds(frames)
    near = args.near if args.near is not None else near
    far = args.far if args.far is not None else far
    sampling = SamplingConfig(samples_per_ray=args.samples_per_ray, stratified=False)
    return params, selected, near, far, sampling


def cmd_render(args) -> int:
    import numpy as np

    from .imgio import write_pfm, write_png
    from .renderer import render_image

    params, frames, near, far, sampling = _load_for_inference(args)
    out = _out_dir(args)
    names = []
    for i, frame in enumerate(frames):
        image, depth, _ = render_image(params, frame.camera, near, far, sampling)
        write_png(out / f"render_{i:03d}.png", image)
        write_pfm(out / f"render_{i:03d}_depth.pfm", depth.astype(np.float32))
        names.append(f"render_{i:03d}.png")
    _write_manifest(out, "render",
                    {"data": str(args.data), "checkpoint": str(args.checkpoint),
                     "split": args.split, "near": near, "far": far,
                     "samples_per_ray": args.samples_per_ray},
                    args.seed, {"renders": names})
    return 0


def cmd_eval(args) -> int:
    from .metrics import MetricReport
    from .renderer import render_image

    params, frames, near, far, sampling = _load_for_inference(args)
    report = MetricReport()
    for frame in frames:
        image, _, _ = render_image(params, frame.camera, near, far, sampling)
        report.add(image, frame.image)
    out = _out_dir(args)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.csv").write_text(report.to_csv_rows())
    _write_manifest(out, "eval",
                    {"data": str(args.data), "checkpoint": str(args.checkpoint),
                     "split": args.split, "near": near, "far": far,
                     "samples_per_ray": args.samples_per_ray},
                    args.seed, {"metrics": "metrics.json"})
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfield",
                                     description="sparse-view radiance field toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="render a synthetic dataset with oracle depth")
    p.add_argument("--preset", default="spheres3")
    p.add_argument("--train-views", type=int, default=3)
    p.add_argument("--test-views", type=int, default=4)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--focal", type=float, default=None, help="focal length in px (default: res)")
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--height", type=float, default=1.5)
    p.add_argument("--arc-degrees", type=float, default=360.0,
                   help="camera arc; < 360 gives a forward-facing rig")
    p.add_argument("--depth-scale", type=float, default=1.0)
    p.add_argument("--depth-noise", type=float, default=0.0)
    _add_common(p)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("derive-masks", help="derive 3D-consistency masks from depth")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--portion", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(func=cmd_derive_masks)

    p = sub.add_parser("train", help="train a radiance field")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["baseline", "multiview", "singleview", "full",
                                      "multiview_only", "singleview_only"], default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda", dest="lambda_offmask", type=float, default=None)
    p.add_argument("--beta-depth", type=float, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--portion", type=float, default=None)
    p.add_argument("--rays-per-batch", type=int, default=None)
    p.add_argument("--patches-per-batch", type=int, default=None)
    p.add_argument("--samples-per-ray", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--near", type=float, default=None)
    p.add_argument("--far", type=float, default=None)
    p.add_argument("--hidden-width", type=int, default=None)
    p.add_argument("--hidden-layers", type=int, default=None)
    p.add_argument("--pos-freqs", type=int, default=None)
    p.add_argument("--dir-freqs", type=int, default=None)
    p.add_argument("--density-activation", choices=["relu", "softplus"], default=None)
    p.add_argument("--bias-init", choices=["zeros", "uniform01"], default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file with config overrides")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    for name, func in (("render", cmd_render), ("eval", cmd_eval)):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=["train", "test"], default="test")
        p.add_argument("--near", type=float, default=None)
        p.add_argument("--far", type=float, default=None)
        p.add_argument("--samples-per-ray", type=int, default=64)
        _add_common(p)
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputDomainError, ConfigurationError, DatasetError, InvalidStateError,
            OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

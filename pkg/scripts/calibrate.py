"""Calibration sweep for the ablation and portion-trend experiments.

Runs the four training modes plus a mask-portion sweep on the spheres3
fixture and prints final test PSNRs, to pick robust acceptance configs.
"""

import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

ARC_DEGREES = 60.0


def build_frames(res=64, train_views=3, test_views=4):
    import numpy as np

    from cfield.geometry import Intrinsics
    from cfield.scene import orbit_rig, preset_scene, render_oracle

    intr = Intrinsics(fx=float(res), fy=float(res), cx=res / 2, cy=res / 2,
                      width=res, height=res)
    frames = []
    for cam, split in orbit_rig(intr, train_views, test_views, radius=4.0, height=1.5,
                                arc=np.radians(ARC_DEGREES)):
        f = render_oracle(preset_scene("spheres3"), cam)
        f.split = split
        frames.append(f)
    return frames


def tight_bounds(frames):
    import numpy as np

    vals = np.concatenate([f.depth.values[f.depth.validity] for f in frames if f.depth])
    return 0.9 * float(vals.min()), 1.1 * float(vals.max())


def run_one(task):
    mode, seed, portion, iters, res = task
    from cfield.correspondence import MaskConfig
    from cfield.field import EncodingConfig, FieldConfig
    from cfield.losses import LossWeights
    from cfield.trainer import TrainConfig, run_training

    frames = build_frames(res=res)
    near, far = tight_bounds([f for f in frames if f.split == "train"])
    fc = FieldConfig(hidden_layers=3, hidden_width=48,
                     encoding=EncodingConfig(6, 2), skip_connection_layer=None)
    cfg = TrainConfig(mode=mode, iterations=iters, rays_per_batch=512, patches_per_batch=2,
                      samples_per_ray=24, field_config=fc, seed=seed,
                      t_near=near, t_far=far,
                      mask_config=MaskConfig(alpha=0.1, portion=portion),
                      loss_weights=LossWeights(lambda_offmask=0.1, beta_depth=0.1, patch_size=8),
                      eval_every=1000)
    t0 = time.time()
    _, log = run_training(cfg, frames)
    curve = [(r.iteration, round(r.test_psnr, 2)) for r in log.records]
    return (mode, seed, portion, res, iters, round(log.final_psnr(), 3),
            round(time.time() - t0, 1), curve)


def main():
    tasks = []
    for mode in ("baseline", "multiview_only", "singleview_only", "full"):
        tasks.append((mode, 0, 1.0, 5000, 64))
    for portion in (0.0, 0.3, 0.6, 1.0):
        tasks.append(("multiview_only", 10, portion, 5000, 64))
    with ProcessPoolExecutor(max_workers=2) as pool:
        for result in pool.map(run_one, tasks):
            print("RESULT", result, flush=True)


if __name__ == "__main__":
    sys.exit(main())

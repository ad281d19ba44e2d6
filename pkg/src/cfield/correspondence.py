"""Multi-view 3D-consistency masks.

A source pixel joins the mask when, in at least one target view, the point
unprojected with the source depth lands inside the image and the target's
own depth at that pixel agrees with the projected depth to within the
threshold. Target pixels are looked up at the nearest integer grid cell
(with half-integer pixel centers that is floor of the continuous
coordinate); no depth interpolation is done, so a brute-force per-pixel
reference reproduces the mask bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputDomainError
from .geometry import Camera, project_points, unproject_grid
from .imgio import write_png


@dataclass
class DepthMap:
    """Per-pixel depth (camera-frame z, world units) with a validity grid."""

    values: np.ndarray  # (H, W) float
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.values.shape != self.validity.shape or self.values.ndim != 2:
            raise InputDomainError("depth values and validity must be matching (H, W) grids")
        valid_vals = self.values[self.validity]
        if valid_vals.size and not (np.all(valid_vals > 0) and np.all(np.isfinite(valid_vals))):
            raise InputDomainError("valid depth entries must be positive and finite")

    @classmethod
    def dense(cls, values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values) & (values > 0))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class MaskConfig:
    alpha: float = 0.1
    portion: float = 1.0

    def __post_init__(self):
        # alpha = 0 is a degenerate threshold: the strict comparison then
        # admits nothing, which the CLI exposes for sanity checks.
        if self.alpha < 0:
            raise InputDomainError("alpha must be nonnegative")
        if not (0.0 <= self.portion <= 1.0):
            raise InputDomainError("portion must be in [0, 1]")


@dataclass
class CorrespondenceMask:
    """Membership grid plus the correspondence it was established through.

    For every in-mask pixel: target_view is the index of the first matching
    target (input order), target_pixel its (column, row), and depth_error the
    |target depth - projected depth| that passed the threshold. Out-of-mask
    pixels carry -1 / -1 / NaN.
    """

    in_mask: np.ndarray  # (H, W) bool
    target_view: np.ndarray  # (H, W) int32, -1 where absent
    target_pixel: np.ndarray  # (H, W, 2) int32 (col, row), -1 where absent
    depth_error: np.ndarray  # (H, W) float, NaN where absent

    @property
    def coverage(self) -> float:
        return float(self.in_mask.mean())

    def count(self) -> int:
        return int(self.in_mask.sum())


def derive_mask(source: tuple[Camera, DepthMap], targets: list[tuple[Camera, DepthMap]],
                config: MaskConfig) -> CorrespondenceMask:
    """Derive the consistency mask of a source view against target views."""
    src_cam, src_depth = source
    h, w = src_depth.shape
    if (src_cam.intrinsics.height, src_cam.intrinsics.width) != (h, w):
        raise InputDomainError("source depth does not match source camera size")
    for cam, depth in targets:
        if depth.shape != (h, w) or (cam.intrinsics.height, cam.intrinsics.width) != (h, w):
            raise InputDomainError("all views must share image dimensions")

    in_mask = np.zeros((h, w), dtype=bool)
    target_view = np.full((h, w), -1, dtype=np.int32)
    target_pixel = np.full((h, w, 2), -1, dtype=np.int32)
    depth_error = np.full((h, w), np.nan)

    world = unproject_grid(src_cam, src_depth.values).reshape(-1, 3)
    src_valid = src_depth.validity.ravel()

    for view_index, (cam, depth) in enumerate(targets):
        u, v, proj_depth, in_front = project_points(cam, world)
        # Half-integer pixel centers: floor() is nearest-center rounding.
        col = np.floor(u).astype(np.int64)
        row = np.floor(v).astype(np.int64)
        inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
        candidate = src_valid & in_front & inside & ~in_mask.ravel()
        if not candidate.any():
            continue
        idx = np.nonzero(candidate)[0]
        c, r = col[idx], row[idx]
        tgt_valid = depth.validity[r, c]
        err = np.abs(depth.values[r, c] - proj_depth[idx])
        hit = tgt_valid & (err < config.alpha)
        sel = idx[hit]
        flat_mask = in_mask.ravel()
        flat_mask[sel] = True
        target_view.ravel()[sel] = view_index
        target_pixel.reshape(-1, 2)[sel, 0] = c[hit]
        target_pixel.reshape(-1, 2)[sel, 1] = r[hit]
        depth_error.ravel()[sel] = err[hit]

    return CorrespondenceMask(in_mask, target_view, target_pixel, depth_error)


def subsample_mask(mask: CorrespondenceMask, portion: float, seed: int) -> CorrespondenceMask:
    """Keep a seeded uniformly random portion of the in-mask pixels; dropped
    pixels have all correspondence fields cleared."""
    if not (0.0 <= portion <= 1.0):
        raise InputDomainError("portion must be in [0, 1]")
    members = np.flatnonzero(mask.in_mask)
    keep_count = int(round(portion * members.size))
    rng = np.random.default_rng(seed)
    kept = rng.choice(members, size=keep_count, replace=False) if members.size else members

    in_mask = np.zeros_like(mask.in_mask)
    in_mask.ravel()[kept] = True
    target_view = np.where(in_mask, mask.target_view, -1).astype(np.int32)
    target_pixel = np.where(in_mask[:, :, None], mask.target_pixel, -1).astype(np.int32)
    depth_error = np.where(in_mask, mask.depth_error, np.nan)
    return CorrespondenceMask(in_mask, target_view, target_pixel, depth_error)


def save_mask(mask: CorrespondenceMask, png_path, config: MaskConfig, seed: int | None = None) -> None:
    """Export the mask as a PNG (255 in, 0 out) with a JSON sidecar carrying
    the threshold, portion, seed and coverage fraction."""
    png_path = Path(png_path)
    write_png(png_path, mask.in_mask.astype(np.uint8) * 255)
    sidecar = {
        "alpha": config.alpha,
        "portion": config.portion,
        "seed": seed,
        "coverage": mask.coverage,
    }
    png_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

"""Quadrature volume rendering: per-ray color, expected depth and opacity,
differentiable end to end through the field.

Discretization along a ray with samples t_1 < ... < t_N in [t_near, t_far]:

    delta_i = t_{i+1} - t_i          (last delta = t_far - t_N)
    alpha_i = 1 - exp(-sigma_i * delta_i)
    T_i     = prod_{j<i} (1 - alpha_j)
    w_i     = T_i * alpha_i

    color          = sum_i w_i * c_i   (+ (1 - opacity) * background if set)
    opacity        = sum_i w_i
    expected depth = sum_i w_i * t_i / max(opacity, EPS_WEIGHT)

The expected depth is opacity-normalized (with a small floor) so that depth
supervision stays meaningful on semi-transparent rays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError, InvalidStateError
from .field import FieldParams, FieldTape, backward_field, forward_field
from .geometry import Camera, Ray, camera_rays

EPS_WEIGHT = 1e-8


@dataclass(frozen=True)
class SamplingConfig:
    samples_per_ray: int = 64
    stratified: bool = False
    perturb_seed: int = 0

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise InputDomainError("need at least 2 samples per ray")


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray  # (3,)
    expected_depth: float
    opacity: float
    weights: np.ndarray  # (N_s,)


def sample_bins(t_near: float, t_far: float, n_samples: int, count: int,
                stratified: bool, rng: np.random.Generator | None) -> np.ndarray:
    """(count, n_samples) strictly increasing sample positions: bin midpoints,
    or one uniform draw per bin when stratified."""
    width = (t_far - t_near) / n_samples
    lower = t_near + width * np.arange(n_samples)
    if stratified:
        if rng is None:
            raise InvalidStateError("stratified sampling needs an rng")
        u = rng.random((count, n_samples))
    else:
        u = np.full((count, n_samples), 0.5)
    return lower + u * width


def sample_along_ray(ray: Ray, config: SamplingConfig) -> np.ndarray:
    """Sample positions for a single ray (seeded by config.perturb_seed when
    stratified)."""
    rng = np.random.default_rng(config.perturb_seed) if config.stratified else None
    return sample_bins(ray.t_near, ray.t_far, config.samples_per_ray, 1,
                       config.stratified, rng)[0]


class RenderBatch:
    """Outputs plus compositing cache for one batch of rendered rays."""

    __slots__ = (
        "color", "expected_depth", "opacity", "weights", "t", "deltas",
        "trans_next", "rgb", "tape", "background", "raw_opacity",
    )

    color: np.ndarray  # (B, 3)
    expected_depth: np.ndarray  # (B,)
    opacity: np.ndarray  # (B,)
    weights: np.ndarray  # (B, N)
    tape: FieldTape


def render_rays(params: FieldParams, origins: np.ndarray, directions: np.ndarray,
                t_near: float, t_far: float, config: SamplingConfig,
                rng: np.random.Generator | None = None,
                background: np.ndarray | None = None) -> RenderBatch:
    """Render a batch of rays, keeping the tape needed by backward_render.

    origins/directions are (B, 3) with unit directions. `background`, when
    given, is composited behind the field as (1 - opacity) * background.
    """
    if not (0 < t_near < t_far):
        raise InputDomainError(f"need 0 < t_near < t_far, got [{t_near}, {t_far}]")
    dt = params.dtype
    origins = np.asarray(origins, dtype=dt)
    directions = np.asarray(directions, dtype=dt)
    b = origins.shape[0]
    n = config.samples_per_ray

    t = sample_bins(t_near, t_far, n, b, config.stratified, rng).astype(dt)
    points = origins[:, None, :] + t[:, :, None] * directions[:, None, :]
    dirs_flat = np.broadcast_to(directions[:, None, :], points.shape).reshape(-1, 3)
    tape = forward_field(params, points.reshape(-1, 3), dirs_flat)
    sigma = tape.sigma.reshape(b, n)
    rgb = tape.rgb.reshape(b, n, 3)
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(rgb))):
        raise InvalidStateError("field produced non-finite density or color")

    deltas = np.empty_like(t)
    deltas[:, :-1] = t[:, 1:] - t[:, :-1]
    deltas[:, -1] = t_far - t[:, -1]
    alphas = 1.0 - np.exp(-sigma * deltas)
    # full[i] = prod_{j<i}(1-alpha_j); trans_next drops the leading ones row.
    full = np.cumprod(np.concatenate([np.ones((b, 1), dtype=dt), 1.0 - alphas], axis=1), axis=1)
    trans = full[:, :-1]
    weights = trans * alphas

    out = RenderBatch()
    out.t = t
    out.deltas = deltas
    out.trans_next = full[:, 1:]
    out.rgb = rgb
    out.tape = tape
    out.weights = weights
    out.raw_opacity = weights.sum(axis=1)
    out.opacity = out.raw_opacity
    out.color = np.einsum("bn,bnc->bc", weights, rgb)
    out.background = None
    if background is not None:
        out.background = np.asarray(background, dtype=dt)
        out.color = out.color + (1.0 - out.opacity)[:, None] * out.background
    out.expected_depth = (weights * t).sum(axis=1) / np.maximum(out.raw_opacity, EPS_WEIGHT)
    return out


def backward_render(params: FieldParams, batch: RenderBatch,
                    d_color: np.ndarray | None = None,
                    d_depth: np.ndarray | None = None,
                    d_opacity: np.ndarray | None = None) -> None:
    """Accumulate parameter gradients for upstream gradients on the batch
    outputs (any of color (B,3), expected depth (B,), opacity (B,))."""
    b, n = batch.weights.shape
    dt = params.dtype
    w, t, rgb = batch.weights, batch.t, batch.rgb

    d_c = np.zeros((b, 3), dtype=dt) if d_color is None else np.asarray(d_color, dtype=dt)
    d_o = np.zeros(b, dtype=dt) if d_opacity is None else np.asarray(d_opacity, dtype=dt).copy()
    if batch.background is not None:
        d_o -= d_c @ batch.background

    # Expected depth S = U / V, U = sum w_i t_i, V = max(opacity, EPS_WEIGHT).
    if d_depth is not None:
        d_s = np.asarray(d_depth, dtype=dt)
        v = np.maximum(batch.raw_opacity, EPS_WEIGHT)
        d_u = d_s / v
        unclamped = batch.raw_opacity > EPS_WEIGHT
        d_o += np.where(unclamped, -d_s * batch.expected_depth / v, 0.0)
    else:
        d_u = None

    # g_i = dL/dw_i
    g = np.einsum("bc,bnc->bn", d_c, rgb) + d_o[:, None]
    if d_u is not None:
        g = g + d_u[:, None] * t

    d_rgb = w[:, :, None] * d_c[:, None, :]

    # dL/dsigma_k = delta_k * (g_k * T_{k+1} - sum_{i>k} g_i w_i)
    gw = g * w
    suffix = np.zeros_like(gw)
    suffix[:, :-1] = np.cumsum(gw[:, ::-1], axis=1)[:, ::-1][:, 1:]
    d_sigma = batch.deltas * (g * batch.trans_next - suffix)

    backward_field(params, batch.tape, d_sigma.reshape(-1), d_rgb.reshape(-1, 3))


def render_ray(params: FieldParams, ray: Ray, config: SamplingConfig,
               background: np.ndarray | None = None) -> RenderOutput:
    """Render a single ray into a RenderOutput."""
    rng = np.random.default_rng(config.perturb_seed) if config.stratified else None
    batch = render_rays(params, ray.origin.reshape(1, 3), ray.direction.reshape(1, 3),
                        ray.t_near, ray.t_far, config, rng=rng, background=background)
    return RenderOutput(
        color=batch.color[0].astype(np.float64),
        expected_depth=float(batch.expected_depth[0]),
        opacity=float(batch.opacity[0]),
        weights=batch.weights[0].astype(np.float64),
    )


def render_image(params: FieldParams, camera: Camera, t_near: float, t_far: float,
                 config: SamplingConfig, background: np.ndarray | None = None,
                 chunk: int = 8192):
    """Render a full camera view; returns (image (H,W,3), depth (H,W),
    opacity (H,W)). Deterministic (midpoint) sampling unless config says
    stratified, in which case perturb_seed seeds the jitter."""
    intr = camera.intrinsics
    origins, dirs = camera_rays(camera)
    rng = np.random.default_rng(config.perturb_seed) if config.stratified else None
    colors, depths, opacities = [], [], []
    for lo in range(0, origins.shape[0], chunk):
        batch = render_rays(params, origins[lo : lo + chunk], dirs[lo : lo + chunk],
                            t_near, t_far, config, rng=rng, background=background)
        colors.append(batch.color)
        depths.append(batch.expected_depth)
        opacities.append(batch.opacity)
    image = np.concatenate(colors).reshape(intr.height, intr.width, 3)
    depth = np.concatenate(depths).reshape(intr.height, intr.width)
    opacity = np.concatenate(opacities).reshape(intr.height, intr.width)
    return np.clip(image.astype(np.float64), 0.0, 1.0), depth.astype(np.float64), opacity.astype(np.float64)

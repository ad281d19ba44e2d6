"""The optimization loop: ray/patch batching, mode-dependent losses, Adam
or SGD updates, periodic held-out evaluation, and persistence.

Modes mirror the regularization ablation:

    baseline        photometric loss only (masks are never computed)
    multiview_only  correspondence-mask-weighted photometric loss
    singleview_only photometric loss + patch depth loss
    full            both regularizers

Pixels are sampled uniformly across training frames; the mask enters only
through the loss weighting. All randomness flows from one seeded generator,
so runs are reproducible bit for bit for a fixed seed, config and thread
count. Wall-clock comes from an injectable clock so logs can be reproduced
byte-identically when a deterministic clock is supplied.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .correspondence import CorrespondenceMask, MaskConfig, derive_mask, subsample_mask
from .errors import ConfigurationError, InputDomainError, InvalidStateError
from .field import FieldConfig, FieldParams, init_params, save_params
from .geometry import camera_rays
from .losses import (LossWeights, masked_photometric_loss, photometric_loss,
                     scale_invariant_depth_loss)
from .metrics import MetricReport
from .renderer import SamplingConfig, backward_render, render_image, render_rays
from .scene import PosedFrame, scene_bounds

MODES = ("baseline", "multiview_only", "singleview_only", "full")
_DEPTH_FLOOR = 1e-6


@dataclass
class TrainConfig:
    iterations: int = 5000  # 50,000 at full scale
    rays_per_batch: int = 1024
    patches_per_batch: int = 8
    learning_rate: float = 5e-4
    lr_decay: float = 0.1  # final/initial learning-rate ratio over the run
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mask_config: MaskConfig = dataclass_field(default_factory=MaskConfig)
    loss_weights: LossWeights = dataclass_field(default_factory=LossWeights)
    mode: str = "full"
    seed: int = 0
    field_config: FieldConfig = dataclass_field(default_factory=FieldConfig)
    samples_per_ray: int = 32
    stratified: bool = True
    t_near: float | None = None  # derived from the dataset when None
    t_far: float | None = None
    eval_every: int = 500
    background: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be nonnegative")
        if self.rays_per_batch < 1:
            raise ConfigurationError("rays_per_batch must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    @property
    def uses_mask(self) -> bool:
        return self.mode in ("multiview_only", "full")

    @property
    def uses_depth(self) -> bool:
        return self.mode in ("singleview_only", "full")


@dataclass(frozen=True)
class TrainLogRecord:
    iteration: int
    loss_photo: float
    loss_mask_off: float  # lambda-weighted off-mask term
    loss_depth: float  # unweighted mean patch depth loss
    test_psnr: float
    test_ssim: float
    seconds: float


class TrainLog:
    CSV_HEADER = "iteration,loss_photo,loss_mask_off,loss_depth,test_psnr,test_ssim,seconds"

    def __init__(self):
        self.records: list[TrainLogRecord] = []

    def append(self, record: TrainLogRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise InvalidStateError("log iterations must be strictly increasing")
        self.records.append(record)

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.iteration},{r.loss_photo!r},{r.loss_mask_off!r},{r.loss_depth!r},"
                f"{r.test_psnr!r},{r.test_ssim!r},{r.seconds!r}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def final_psnr(self) -> float:
        return self.records[-1].test_psnr if self.records else float("nan")


def precompute_masks(train_frames: list[PosedFrame], config: TrainConfig) -> list[CorrespondenceMask] | None:
    """Derive each training frame's mask against all other training frames;
    skipped entirely in modes that do not use the mask."""
    if not config.uses_mask:
        return None
    for i, f in enumerate(train_frames):
        if f.depth is None:
            raise ConfigurationError(f"train frame {i} has no depth map; required in mode {config.mode}")
    masks = []
    for i, f in enumerate(train_frames):
        others = [(g.camera, g.depth) for j, g in enumerate(train_frames) if j != i]
        mask = derive_mask((f.camera, f.depth), others, config.mask_config)
        if config.mask_config.portion < 1.0:
            mask = subsample_mask(mask, config.mask_config.portion, seed=config.seed * 100003 + i)
        masks.append(mask)
    return masks


@dataclass
class TrainBatch:
    ray_indices: np.ndarray  # (B,) into the concatenated train-pixel arrays
    patch_rows: np.ndarray  # (K, P*P) ray indices of patch pixels, possibly empty
    patch_refs: np.ndarray  # (K, P*P) reference depths


class TrainState:
    """Everything train_step mutates: parameters, optimizer moments, rng."""

    def __init__(self, config: TrainConfig, dataset: list[PosedFrame]):
        self.config = config
        self.train_frames = [f for f in dataset if f.split == "train"]
        self.test_frames = [f for f in dataset if f.split == "test"]
        if not self.train_frames:
            raise ConfigurationError("dataset has no training frames")

        near, far = scene_bounds(self.train_frames)
        self.t_near = config.t_near if config.t_near is not None else near
        self.t_far = config.t_far if config.t_far is not None else far
        if not (0 < self.t_near < self.t_far):
            raise ConfigurationError(f"invalid ray bounds [{self.t_near}, {self.t_far}]")

        self.masks = precompute_masks(self.train_frames, config)
        if config.uses_depth and all(f.depth is None for f in self.train_frames):
            raise ConfigurationError(f"mode {config.mode} needs depth on at least one train frame")

        origins, dirs, colors, in_mask = [], [], [], []
        for i, f in enumerate(self.train_frames):
            o, d = camera_rays(f.camera)
            origins.append(o)
            dirs.append(d)
            colors.append(f.image.reshape(-1, 3))
            if self.masks is not None:
                in_mask.append(self.masks[i].in_mask.ravel())
        self.origins = np.concatenate(origins).astype(np.float32)
        self.directions = np.concatenate(dirs).astype(np.float32)
        self.colors = np.concatenate(colors)
        self.in_mask = np.concatenate(in_mask) if in_mask else None
        self.pixels_per_frame = self.train_frames[0].image.shape[0] * self.train_frames[0].image.shape[1]

        # Patch anchors: top-left corners whose full P x P reference-depth
        # window is valid.
        self.patch_frames: list[int] = []
        self.patch_anchors: list[np.ndarray] = []
        p = config.loss_weights.patch_size
        if config.uses_depth:
            for i, f in enumerate(self.train_frames):
                if f.depth is None:
                    continue
                ok = f.depth.validity.astype(np.int64)
                counts = ok.cumsum(axis=0).cumsum(axis=1)
                padded = np.zeros((ok.shape[0] + 1, ok.shape[1] + 1), dtype=np.int64)
                padded[1:, 1:] = counts
                h, w = ok.shape
                window = (
                    padded[p : h + 1, p : w + 1]
                    - padded[: h - p + 1, p : w + 1]
                    - padded[p : h + 1, : w - p + 1]
                    + padded[: h - p + 1, : w - p + 1]
                )
                anchors = np.argwhere(window == p * p)  # (row, col) pairs
                if len(anchors):
                    self.patch_frames.append(i)
                    self.patch_anchors.append(anchors)

        self.params = init_params(config.field_config, seed=config.seed)
        self.opt_m = {k: np.zeros_like(v) for k, v in self.params.values.items()}
        self.opt_v = {k: np.zeros_like(v) for k, v in self.params.values.items()}
        self.iteration = 0
        self.rng = np.random.default_rng(config.seed + 1)

    def learning_rate(self) -> float:
        cfg = self.config
        frac = self.iteration / max(cfg.iterations, 1)
        return cfg.learning_rate * cfg.lr_decay**frac


def sample_batch(state: TrainState) -> TrainBatch:
    cfg = state.config
    rng = state.rng
    ray_indices = rng.integers(0, state.origins.shape[0], size=cfg.rays_per_batch)
    p = cfg.loss_weights.patch_size
    rows, refs = [], []
    if cfg.uses_depth and state.patch_frames:
        width = state.train_frames[0].image.shape[1]
        du, dv = np.meshgrid(np.arange(p), np.arange(p))
        for _ in range(cfg.patches_per_batch):
            pick = int(rng.integers(len(state.patch_frames)))
            frame_idx = state.patch_frames[pick]
            anchors = state.patch_anchors[pick]
            r0, c0 = anchors[int(rng.integers(len(anchors)))]
            rr, cc = (r0 + dv).ravel(), (c0 + du).ravel()
            rows.append(frame_idx * state.pixels_per_frame + rr * width + cc)
            refs.append(state.train_frames[frame_idx].depth.values[rr, cc])
    patch_rows = np.stack(rows) if rows else np.zeros((0, p * p), dtype=np.int64)
    patch_refs = np.stack(refs) if refs else np.zeros((0, p * p))
    return TrainBatch(ray_indices=ray_indices, patch_rows=patch_rows, patch_refs=patch_refs)


@dataclass(frozen=True)
class StepRecord:
    loss_total: float
    loss_photo: float
    loss_mask_off: float
    loss_depth: float


def train_step(state: TrainState, batch: TrainBatch | None = None) -> StepRecord:
    """One optimization step: render the batch, apply the mode's losses,
    backpropagate, and update the parameters."""
    cfg = state.config
    if batch is None:
        batch = sample_batch(state)

    n_photo = batch.ray_indices.size
    k, pp = batch.patch_rows.shape
    all_rows = np.concatenate([batch.ray_indices, batch.patch_rows.ravel()]).astype(np.int64)

    sampling = SamplingConfig(samples_per_ray=cfg.samples_per_ray, stratified=cfg.stratified)
    rendered = render_rays(
        state.params,
        state.origins[all_rows],
        state.directions[all_rows],
        state.t_near,
        state.t_far,
        sampling,
        rng=state.rng if cfg.stratified else None,
        background=None if cfg.background is None else np.asarray(cfg.background),
    )

    pred_color = rendered.color[:n_photo].astype(np.float64)
    target = state.colors[batch.ray_indices]
    if cfg.uses_mask:
        result = masked_photometric_loss(pred_color, target, state.in_mask[batch.ray_indices],
                                         cfg.loss_weights)
        loss_photo = result.in_mask_term
        loss_mask_off = cfg.loss_weights.lambda_offmask * result.off_mask_term
        photo_total = result.total
        color_grad = result.grad
    else:
        photo_total, color_grad = photometric_loss(pred_color, target)
        loss_photo, loss_mask_off = photo_total, 0.0

    d_color = np.zeros((all_rows.size, 3))
    d_color[:n_photo] = color_grad

    loss_depth = 0.0
    d_depth = None
    if k:
        d_depth = np.zeros(all_rows.size)
        pred_depth = rendered.expected_depth[n_photo:].astype(np.float64).reshape(k, pp)
        clamped = np.maximum(pred_depth, _DEPTH_FLOOR)
        scale = cfg.loss_weights.beta_depth / k
        for j in range(k):
            loss_j, grad_j = scale_invariant_depth_loss(clamped[j], batch.patch_refs[j])
            loss_depth += loss_j / k
            grad_j = np.where(pred_depth[j] > _DEPTH_FLOOR, grad_j, 0.0)
            d_depth[n_photo + j * pp : n_photo + (j + 1) * pp] = scale * grad_j

    total = photo_total + cfg.loss_weights.beta_depth * loss_depth
    if not np.isfinite(total):
        raise InvalidStateError(
            f"non-finite loss {total} at iteration {state.iteration} "
            f"(photo={photo_total}, depth={loss_depth})"
        )

    state.params.zero_grad()
    backward_render(state.params, rendered, d_color=d_color, d_depth=d_depth)
    _apply_update(state)
    state.iteration += 1
    return StepRecord(loss_total=total, loss_photo=loss_photo,
                      loss_mask_off=loss_mask_off, loss_depth=loss_depth)


def _apply_update(state: TrainState) -> None:
    cfg = state.config
    lr = state.learning_rate()
    params = state.params
    if cfg.optimizer == "sgd":
        for name, value in params.values.items():
            value -= (lr * params.grads[name]).astype(params.dtype)
        return
    t = state.iteration + 1
    bc1 = 1.0 - cfg.adam_beta1**t
    bc2 = 1.0 - cfg.adam_beta2**t
    for name, value in params.values.items():
        g = params.grads[name]
        m = state.opt_m[name]
        v = state.opt_v[name]
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * (g * g)
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        value -= step.astype(params.dtype)


def evaluate_on_frames(params: FieldParams, frames: list[PosedFrame], t_near: float,
                       t_far: float, samples_per_ray: int,
                       background=None) -> MetricReport:
    """Deterministic (midpoint-sampled) evaluation against reference images."""
    report = MetricReport()
    sampling = SamplingConfig(samples_per_ray=samples_per_ray, stratified=False)
    for f in frames:
        image, _, _ = render_image(params, f.camera, t_near, t_far, sampling,
                                   background=None if background is None else np.asarray(background))
        report.add(image, f.image)
    return report


def run_training(config: TrainConfig, dataset: list[PosedFrame], out_dir=None,
                 clock=time.perf_counter) -> tuple[FieldParams, TrainLog]:
    """Full training loop with periodic test evaluation; persists the final
    checkpoint and log CSV into out_dir when given."""
    test_frames = [f for f in dataset if f.split == "test"]
    if not test_frames:
        raise ConfigurationError("dataset has no test frames")
    state = TrainState(config, dataset)
    log = TrainLog()
    start = clock()

    def evaluate(iteration, photo, mask_off, depth):
        report = evaluate_on_frames(state.params, test_frames, state.t_near, state.t_far,
                                    config.samples_per_ray, background=config.background)
        log.append(TrainLogRecord(
            iteration=iteration, loss_photo=photo, loss_mask_off=mask_off, loss_depth=depth,
            test_psnr=report.mean_psnr, test_ssim=report.mean_ssim, seconds=clock() - start,
        ))

    evaluate(0, float("nan"), float("nan"), float("nan"))
    interval: list[StepRecord] = []
    for it in range(config.iterations):
        interval.append(train_step(state))
        if (it + 1) % config.eval_every == 0 or it + 1 == config.iterations:
            evaluate(
                it + 1,
                float(np.mean([r.loss_photo for r in interval])),
                float(np.mean([r.loss_mask_off for r in interval])),
                float(np.mean([r.loss_depth for r in interval])),
            )
            interval = []

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_params(state.params, out_dir / "checkpoint.bin")
        log.save(out_dir / "trainlog.csv")
    return state.params, log

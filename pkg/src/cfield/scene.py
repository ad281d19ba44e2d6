"""Synthetic-scene oracle and dataset serialization.

Scenes are unions of spheres and axis-aligned boxes with constant albedo,
rendered by analytic ray tracing: exact RGB and exact camera-frame depth.
Shading, when enabled, is Lambertian against a fixed light direction and
therefore view-independent, so multi-view color consistency holds exactly.

Dataset layout (one directory):

    dataset.json   {width, height, intrinsics{fx,fy,cx,cy},
                    frames: [{image, depth?, camera_to_world: 16 row-major
                    floats, split}]}
    *.png          8-bit RGB frames
    *_depth.pfm    float32 depth, invalid pixels stored as 0
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correspondence import DepthMap
from .errors import DatasetError, InputDomainError
from .geometry import Camera, Intrinsics, Pose, camera_rays, look_at_pose
from .imgio import read_pfm, read_png, write_pfm, write_png

_AMBIENT = 0.25
_HIT_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float]
    # optional 3D checker texture: (cell size, second albedo)
    checker: tuple[float, tuple[float, float, float]] | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise InputDomainError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and full extents."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    albedo: tuple[float, float, float]
    checker: tuple[float, tuple[float, float, float]] | None = None

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise InputDomainError("box extents must be positive")


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=list)
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    light_direction: tuple[float, float, float] | None = None  # direction light travels


@dataclass
class PosedFrame:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth: DepthMap | None
    camera: Camera
    split: str  # "train" | "test"

    def __post_init__(self):
        intr = self.camera.intrinsics
        if self.image.shape != (intr.height, intr.width, 3):
            raise InputDomainError(
                f"image shape {self.image.shape} does not match camera {intr.height}x{intr.width}"
            )
        if self.depth is not None and self.depth.shape != (intr.height, intr.width):
            raise InputDomainError("depth dimensions must match the image")
        if self.split not in ("train", "test"):
            raise InputDomainError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class DepthCorruption:
    """Emulates scale-ambiguous estimated depth: a global scale plus
    multiplicative log-normal noise."""

    global_scale: float = 1.0
    multiplicative_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.global_scale <= 0:
            raise InputDomainError("global_scale must be positive")
        if self.multiplicative_noise_std < 0:
            raise InputDomainError("multiplicative_noise_std must be nonnegative")


def _intersect_sphere(origins, dirs, sphere: Sphere):
    center = np.asarray(sphere.center)
    oc = origins - center
    b = np.einsum("ij,ij->i", oc, dirs)
    c0 = np.einsum("ij,ij->i", oc, oc) - sphere.radius**2
    disc = b * b - c0
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > _HIT_EPS, t_near, t_far)
    t = np.where(hit & (t > _HIT_EPS), t, np.inf)
    return t


def _intersect_box(origins, dirs, box: Box):
    lo = np.asarray(box.center) - 0.5 * np.asarray(box.size)
    hi = np.asarray(box.center) + 0.5 * np.asarray(box.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    # Parallel rays: +-inf slabs sort correctly; NaN (origin on the slab)
    # is resolved by treating it as no constraint.
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    t = np.where(tmin > _HIT_EPS, tmin, tmax)
    hit = (tmax >= np.maximum(tmin, _HIT_EPS)) & (t > _HIT_EPS)
    return np.where(hit, t, np.inf)


def _albedo_at(primitive, points):
    """Per-point albedo: constant, or a world-space 3D checker (a texture
    tied to the surface point, hence view-independent)."""
    base = np.broadcast_to(np.asarray(primitive.albedo, dtype=np.float64),
                           (len(points), 3)).copy()
    if primitive.checker is not None:
        cell, other = primitive.checker
        parity = np.floor(points / cell).astype(np.int64).sum(axis=1) % 2
        base[parity == 1] = other
    return base


def _normal_at(primitive, points):
    if isinstance(primitive, Sphere):
        n = points - np.asarray(primitive.center)
        return n / np.linalg.norm(n, axis=1, keepdims=True)
    local = (points - np.asarray(primitive.center)) / (0.5 * np.asarray(primitive.size))
    axis = np.argmax(np.abs(local), axis=1)
    n = np.zeros_like(points)
    n[np.arange(len(points)), axis] = np.sign(local[np.arange(len(points)), axis])
    return n


def trace_rays(spec: SceneSpec, origins, dirs):
    """Nearest-hit trace; returns (t, primitive index) with t=inf, index=-1
    on misses. Shared by the oracle renderer and visibility tests."""
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_idx = np.full(n, -1, dtype=np.int64)
    for i, prim in enumerate(spec.primitives):
        if isinstance(prim, Sphere):
            t = _intersect_sphere(origins, dirs, prim)
        elif isinstance(prim, Box):
            t = _intersect_box(origins, dirs, prim)
        else:
            raise InputDomainError(f"unknown primitive type {type(prim).__name__}")
        closer = t < best_t
        best_t[closer] = t[closer]
        best_idx[closer] = i
    return best_t, best_idx


def render_oracle(spec: SceneSpec, camera: Camera) -> PosedFrame:
    """Analytically render RGB plus exact depth for one camera."""
    intr = camera.intrinsics
    origins, dirs = camera_rays(camera)
    t, idx = trace_rays(spec, origins, dirs)
    hit = idx >= 0

    image = np.tile(np.asarray(spec.background, dtype=np.float64), (len(t), 1))
    depth = np.zeros(len(t))
    if hit.any():
        points = origins[hit] + t[hit, None] * dirs[hit]
        shade = np.ones(hit.sum())
        if spec.light_direction is not None:
            light = np.asarray(spec.light_direction, dtype=np.float64)
            light = light / np.linalg.norm(light)
            normals = np.zeros_like(points)
            for i, prim in enumerate(spec.primitives):
                sel = idx[hit] == i
                if sel.any():
                    normals[sel] = _normal_at(prim, points[sel])
            shade = _AMBIENT + (1.0 - _AMBIENT) * np.maximum(0.0, -normals @ light)
        albedos = np.zeros_like(points)
        for i, prim in enumerate(spec.primitives):
            sel = idx[hit] == i
            if sel.any():
                albedos[sel] = _albedo_at(prim, points[sel])
        image[hit] = np.clip(albedos * shade[:, None], 0.0, 1.0)
        # Depth is the camera-frame z of the hit point.
        w2c = camera.pose.world_to_camera
        depth[hit] = (points @ w2c[:3, :3].T + w2c[:3, 3])[:, 2]

    h, w = intr.height, intr.width
    depth_map = DepthMap(depth.reshape(h, w), hit.reshape(h, w))
    return PosedFrame(image=image.reshape(h, w, 3), depth=depth_map, camera=camera, split="train")


def corrupt_depth(depth: DepthMap, corruption: DepthCorruption) -> DepthMap:
    """Scale every valid depth by global_scale * exp(g), g ~ N(0, std^2)."""
    rng = np.random.default_rng(corruption.seed)
    noise = np.exp(rng.normal(0.0, corruption.multiplicative_noise_std, size=depth.shape)) \
        if corruption.multiplicative_noise_std > 0 else np.ones(depth.shape)
    values = np.where(depth.validity, depth.values * corruption.global_scale * noise, depth.values)
    return DepthMap(values, depth.validity.copy())


def orbit_rig(intrinsics: Intrinsics, n_train: int, n_test: int, radius: float,
              height: float, target=(0.0, 0.0, 0.0),
              arc: float = 2 * np.pi) -> list[tuple[Camera, str]]:
    """Cameras on a circle (or an arc of it) of the given radius and height,
    looking at the target.

    Train views are evenly spaced over the arc; test views are interleaved
    strictly inside it. `arc` is the subtended angle in radians; the default
    is a full orbit, while a narrow arc gives a forward-facing-style rig
    (the sparse-view regime where 3-view reconstruction is ambiguous).
    """
    views = []
    if arc >= 2 * np.pi - 1e-9:
        for k in range(n_train):
            views.append((2 * np.pi * k / n_train, "train"))
        for k in range(max(n_test, 0)):
            views.append((2 * np.pi * k / max(n_test, 1) + np.pi / max(n_train, 1), "test"))
    else:
        if n_train > 1:
            for k in range(n_train):
                views.append((-arc / 2 + arc * k / (n_train - 1), "train"))
        else:
            views.append((0.0, "train"))
        for k in range(max(n_test, 0)):
            views.append((-arc / 2 + arc * (k + 0.5) / n_test, "test"))
    cameras = []
    for angle, split in views:
        eye = (radius * np.cos(angle), radius * np.sin(angle), height)
        cameras.append((Camera(intrinsics, look_at_pose(eye, target)), split))
    return cameras


def scene_bounds(frames: list[PosedFrame], fallback=(0.1, 10.0)) -> tuple[float, float]:
    """Ray-sampling bounds derived from valid depths (with margin), or the
    fallback when no frame carries depth."""
    lo, hi = np.inf, 0.0
    for f in frames:
        if f.depth is not None and f.depth.validity.any():
            vals = f.depth.values[f.depth.validity]
            lo = min(lo, float(vals.min()))
            hi = max(hi, float(vals.max()))
    if not np.isfinite(lo) or hi <= 0:
        return fallback
    return max(0.5 * lo, 1e-3), 1.5 * hi


def preset_scene(name: str) -> SceneSpec:
    """Named fixture scenes used by the CLI and the test suite."""
    if name == "sphere1":
        return SceneSpec(
            primitives=[Sphere((0.0, 0.0, 0.0), 1.0, (0.9, 0.3, 0.2))],
            background=(0.0, 0.0, 0.0),
        )
    if name == "spheres3":
        # Three spheres in front of a backdrop wall and floor. Cameras sit on
        # the +x side; the backdrop keeps every pixel depth-valid, so depth
        # supervision and the correspondence mask are dense (mirroring dense
        # estimated depth on real captures).
        return SceneSpec(
            primitives=[
                Sphere((0.0, 0.0, 0.0), 1.0, (0.85, 0.25, 0.2),
                       checker=(0.45, (0.95, 0.85, 0.3))),
                Sphere((0.9, 1.15, 0.4), 0.55, (0.2, 0.75, 0.3),
                       checker=(0.3, (0.9, 0.9, 0.9))),
                Sphere((0.7, -1.2, -0.45), 0.45, (0.25, 0.35, 0.9),
                       checker=(0.25, (0.85, 0.5, 0.15))),
                Box((-2.6, 0.0, 0.6), (0.4, 16.0, 9.0), (0.8, 0.75, 0.65),
                    checker=(0.8, (0.25, 0.3, 0.4))),
                Box((0.0, 0.0, -1.75), (16.0, 16.0, 0.4), (0.5, 0.55, 0.6),
                    checker=(0.7, (0.2, 0.22, 0.25))),
            ],
            background=(0.02, 0.02, 0.03),
            light_direction=(-0.45, 0.3, -0.84),
        )
    raise InputDomainError(f"unknown scene preset {name!r}")


def save_dataset(frames: list[PosedFrame], path) -> None:
    """Write frames + dataset.json into a directory (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not frames:
        raise InputDomainError("cannot save an empty dataset")
    intr = frames[0].camera.intrinsics
    entries = []
    for i, frame in enumerate(frames):
        if frame.camera.intrinsics != intr:
            raise InputDomainError("all frames in a dataset must share intrinsics")
        image_name = f"frame_{i:03d}.png"
        write_png(path / image_name, frame.image)
        entry = {
            "image": image_name,
            "camera_to_world": [float(x) for x in frame.camera.pose.camera_to_world.ravel()],
            "split": frame.split,
        }
        if frame.depth is not None:
            depth_name = f"frame_{i:03d}_depth.pfm"
            write_pfm(path / depth_name, np.where(frame.depth.validity, frame.depth.values, 0.0))
            entry["depth"] = depth_name
        entries.append(entry)
    meta = {
        "width": intr.width,
        "height": intr.height,
        "intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy},
        "frames": entries,
    }
    (path / "dataset.json").write_text(json.dumps(meta, indent=2))


def load_dataset(path) -> list[PosedFrame]:
    """Load a dataset directory; raises DatasetError naming whatever is
    missing or inconsistent."""
    path = Path(path)
    meta_path = path / "dataset.json"
    if not meta_path.exists():
        raise DatasetError(f"dataset manifest not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed {meta_path}: {e}") from None
    try:
        intr = Intrinsics(width=int(meta["width"]), height=int(meta["height"]),
                          **{k: float(v) for k, v in meta["intrinsics"].items()})
        entries = meta["frames"]
    except (KeyError, TypeError) as e:
        raise DatasetError(f"{meta_path} missing required key: {e}") from None

    frames = []
    for entry in entries:
        c2w = np.asarray(entry["camera_to_world"], dtype=np.float64)
        if c2w.size != 16:
            raise DatasetError(f"{meta_path}: camera_to_world must have 16 entries")
        camera = Camera(intr, Pose(c2w.reshape(4, 4)))
        image = read_png(path / entry["image"])
        if image.shape != (intr.height, intr.width, 3):
            raise DatasetError(
                f"{entry['image']}: size {image.shape[:2]} does not match dataset "
                f"{intr.height}x{intr.width}"
            )
        depth = None
        if "depth" in entry:
            values = read_pfm(path / entry["depth"])
            if values.shape != (intr.height, intr.width):
                raise DatasetError(f"{entry['depth']}: depth size does not match dataset")
            depth = DepthMap(values.astype(np.float64), values > 0)
        frames.append(PosedFrame(image=image, depth=depth, camera=camera, split=entry["split"]))
    return frames

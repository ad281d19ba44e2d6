"""Pinhole camera model, ray generation, and unproject/reproject machinery.

Conventions used throughout the toolkit:

* camera frame: x-right, y-down, z-forward; depth of a point is its z value
  in the camera frame.
* pixel coordinate (u, v) = (column, row). Integer pixel index (col, row)
  has its center at the continuous coordinate (col + 0.5, row + 0.5); all
  functions here take *continuous* coordinates and callers that iterate the
  pixel grid pass centers explicitly.
* poses are stored as camera-to-world transforms; world-to-camera is the
  rigid inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InputDomainError

_ROT_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics (focal lengths and principal point, in pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputDomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise InputDomainError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        """The 3x3 intrinsic matrix [[fx,0,cx],[0,fy,cy],[0,0,1]]."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )


class Pose:
    """Rigid camera-to-world transform (4x4, orthonormal rotation, det +1)."""

    __slots__ = ("camera_to_world", "world_to_camera")

    def __init__(self, camera_to_world: np.ndarray):
        m = np.asarray(camera_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise InputDomainError(f"pose must be 4x4, got shape {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise InputDomainError("pose last row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) >= _ROT_TOL:
            raise InputDomainError("pose rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise InputDomainError("pose rotation block must have determinant +1")
        self.camera_to_world = m
        # Rigid inverse: [R t]^-1 = [R^T  -R^T t]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ m[:3, 3]
        self.world_to_camera = inv

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @property
    def position(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return self.camera_to_world[:3, 3].copy()

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation block."""
        return self.camera_to_world[:3, :3].copy()


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose


@dataclass(frozen=True)
class Ray:
    """World-space ray origin + unit direction with positive near/far bounds."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > 1e-9:
            raise InputDomainError("ray direction must be a unit vector")
        if not (0 < self.t_near < self.t_far):
            raise InputDomainError(f"need 0 < t_near < t_far, got [{self.t_near}, {self.t_far}]")

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t), self.direction)


def pixel_ray(camera: Camera, u: float, v: float, t_near: float = 0.1, t_far: float = 10.0) -> Ray:
    """Cast the world-space ray through continuous image coordinate (u, v).

    (u, v) is (column, row); pass (i + 0.5, j + 0.5) to hit the center of
    integer pixel (i, j).
    """
    intr = camera.intrinsics
    if not (0 <= u < intr.width) or not (0 <= v < intr.height):
        raise InputDomainError(f"pixel ({u}, {v}) outside image {intr.width}x{intr.height}")
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_world = camera.pose.rotation @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(origin=camera.pose.position, direction=d_world, t_near=t_near, t_far=t_far)


def unproject(camera: Camera, u: float, v: float, depth: float) -> np.ndarray:
    """World coordinate of the point at (u, v) with the given camera-frame depth."""
    if depth <= 0:
        raise InputDomainError(f"depth must be positive, got {depth}")
    intr = camera.intrinsics
    x_cam = np.array([depth * (u - intr.cx) / intr.fx, depth * (v - intr.cy) / intr.fy, depth])
    m = camera.pose.camera_to_world
    return m[:3, :3] @ x_cam + m[:3, 3]


def project(camera: Camera, point: np.ndarray) -> tuple[float, float, float]:
    """Project a world point into the image plane; returns (u, v, depth).

    Raises BehindCameraError when the point has nonpositive camera-frame
    depth (callers treat this as "no correspondence").
    """
    m = camera.pose.world_to_camera
    x_cam = m[:3, :3] @ np.asarray(point, dtype=np.float64) + m[:3, 3]
    z = float(x_cam[2])
    if z <= 0:
        raise BehindCameraError(f"point has nonpositive camera-frame depth {z}")
    intr = camera.intrinsics
    u = intr.fx * float(x_cam[0]) / z + intr.cx
    v = intr.fy * float(x_cam[1]) / z + intr.cy
    return u, v, z


def camera_rays(camera: Camera, t_near: float = 0.1, t_far: float = 10.0):
    """Origins and unit directions through all pixel centers.

    Returns (origins, directions) of shape (H*W, 3), row-major over the
    pixel grid. Shared helper for the renderer, the oracle scene tracer,
    and the trainer; bounds are carried by the caller.
    """
    intr = camera.intrinsics
    u = (np.arange(intr.width) + 0.5 - intr.cx) / intr.fx
    v = (np.arange(intr.height) + 0.5 - intr.cy) / intr.fy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d_world = d_cam @ camera.pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.pose.position, d_world.shape).copy()
    del t_near, t_far  # bounds are not baked into the arrays
    return origins, d_world


def unproject_grid(camera: Camera, depth: np.ndarray) -> np.ndarray:
    """Unproject every pixel center of a (H, W) depth grid to world points.

    Invalid entries (nonpositive/nonfinite) produce garbage rows; callers
    mask them out. Returns shape (H, W, 3).
    """
    intr = camera.intrinsics
    if depth.shape != (intr.height, intr.width):
        raise InputDomainError(
            f"depth shape {depth.shape} does not match camera {intr.height}x{intr.width}"
        )
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    x = depth * (uu - intr.cx) / intr.fx
    y = depth * (vv - intr.cy) / intr.fy
    pts_cam = np.stack([x, y, depth], axis=-1)
    m = camera.pose.camera_to_world
    return pts_cam @ m[:3, :3].T + m[:3, 3]


def project_points(camera: Camera, points: np.ndarray):
    """Project (N, 3) world points; returns (u, v, depth, in_front).

    Points behind the camera get in_front=False instead of raising, so the
    correspondence scan can treat them as "no correspondence" in bulk.
    """
    m = camera.pose.world_to_camera
    pts_cam = np.asarray(points, dtype=np.float64) @ m[:3, :3].T + m[:3, 3]
    z = pts_cam[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    intr = camera.intrinsics
    u = intr.fx * pts_cam[..., 0] / safe_z + intr.cx
    v = intr.fy * pts_cam[..., 1] / safe_z + intr.cy
    return u, v, z, in_front


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose looking from eye toward target.

    `up` is the world up direction; the camera's y axis (which points down
    in our convention) is aligned against it as far as the view direction
    allows.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(z)
    if norm < 1e-12:
        raise InputDomainError("eye and target coincide")
    z = z / norm
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    norm = np.linalg.norm(x)
    if norm < 1e-9:
        raise InputDomainError("view direction is parallel to the up vector")
    x = x / norm
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, eye
    return Pose(m)

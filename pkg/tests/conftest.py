import numpy as np
import pytest

from cfield.geometry import Camera, Intrinsics, Pose, look_at_pose


def make_random_camera(rng, width=32, height=24):
    """Random pose (QR-orthonormalized rotation) and random intrinsics."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    m = np.eye(4)
    m[:3, :3] = q
    m[:3, 3] = rng.normal(scale=3.0, size=3)
    intr = Intrinsics(fx=rng.uniform(20, 100), fy=rng.uniform(20, 100),
                      cx=width / 2 + rng.uniform(-2, 2), cy=height / 2 + rng.uniform(-2, 2),
                      width=width, height=height)
    return Camera(intr, Pose(m))


def identity_camera(width=32, height=32, fx=None, fy=None, cx=None, cy=None, translation=(0, 0, 0)):
    m = np.eye(4)
    m[:3, 3] = translation
    intr = Intrinsics(
        fx=fx if fx is not None else float(width),
        fy=fy if fy is not None else float(height),
        cx=cx if cx is not None else width / 2.0,
        cy=cy if cy is not None else height / 2.0,
        width=width,
        height=height,
    )
    return Camera(intr, Pose(m))


def orbit_camera(angle, radius=4.0, height=0.0, width=32, height_px=32, focal=None):
    intr = Intrinsics(fx=focal or float(width), fy=focal or float(width),
                      cx=width / 2.0, cy=height_px / 2.0, width=width, height=height_px)
    eye = (radius * np.cos(angle), radius * np.sin(angle), height)
    return Camera(intr, look_at_pose(eye, (0.0, 0.0, 0.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(42)

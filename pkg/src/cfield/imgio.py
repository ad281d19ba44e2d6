"""PNG and PFM image file IO.

PNG carries 8-bit RGB (or grayscale masks); PFM carries float32 depth maps
as grayscale "Pf" with a scale of -1.0 (little-endian) and the standard
bottom-to-top row order.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import DatasetError


def write_png(path, image: np.ndarray) -> None:
    """Write a float image in [0,1] (H,W,3) or a uint8 array as 8-bit PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read a PNG into a float array in [0,1]; RGB images give (H,W,3)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    except FileNotFoundError:
        raise DatasetError(f"image file not found: {path}") from None
    return arr.astype(np.float64) / 255.0


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H,W) float array as grayscale PFM (little-endian, scale -1.0)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a (H, W) array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # PFM stores rows bottom to top.
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a float32 (H,W) array (top-to-bottom)."""
    try:
        f = open(path, "rb")
    except FileNotFoundError:
        raise DatasetError(f"depth file not found: {path}") from None
    with f:
        header = f.readline().strip()
        if header != b"Pf":
            raise DatasetError(f"{path}: not a grayscale PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise DatasetError(f"{path}: malformed PFM dimensions line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(4 * w * h)
        if len(raw) != 4 * w * h:
            raise DatasetError(f"{path}: truncated PFM payload")
        arr = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.ascontiguousarray(arr[::-1]).astype(np.float32)

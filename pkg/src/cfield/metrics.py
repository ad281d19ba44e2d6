"""Image-quality metrics: PSNR and windowed SSIM.

SSIM uses the reference parameters: 11x11 Gaussian window with sigma 1.5,
K1=0.01, K2=0.03, dynamic range 1.0, computed per channel over valid window
positions and averaged. LPIPS is intentionally not computed (it would pull
in a pretrained network); reports carry an explicit marker so table layouts
stay comparable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import InputDomainError

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0,1]; +inf when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputDomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, kernel: np.ndarray) -> float:
    c1 = _K1**2
    c2 = _K2**2
    mu_a = convolve2d(a, kernel, mode="valid")
    mu_b = convolve2d(b, kernel, mode="valid")
    var_a = convolve2d(a * a, kernel, mode="valid") - mu_a**2
    var_b = convolve2d(b * b, kernel, mode="valid") - mu_b**2
    cov = convolve2d(a * b, kernel, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid window positions, per channel then averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputDomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < _SSIM_WINDOW or a.shape[1] < _SSIM_WINDOW:
        raise InputDomainError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window")
    kernel = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    return float(np.mean([_ssim_channel(a[:, :, c], b[:, :, c], kernel) for c in range(a.shape[2])]))


@dataclass
class MetricReport:
    per_image_psnr: list[float] = field(default_factory=list)
    per_image_ssim: list[float] = field(default_factory=list)

    def add(self, rendered: np.ndarray, reference: np.ndarray) -> None:
        self.per_image_psnr.append(psnr(rendered, reference))
        self.per_image_ssim.append(ssim(rendered, reference))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.per_image_psnr)) if self.per_image_psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.per_image_ssim)) if self.per_image_ssim else math.nan

    def to_dict(self) -> dict:
        return {
            "psnr": self.mean_psnr,
            "ssim": self.mean_ssim,
            "lpips": "not computed",
            "per_image": [
                {"psnr": p, "ssim": s}
                for p, s in zip(self.per_image_psnr, self.per_image_ssim)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv_rows(self) -> str:
        lines = ["index,psnr,ssim,lpips"]
        for i, (p, s) in enumerate(zip(self.per_image_psnr, self.per_image_ssim)):
            lines.append(f"{i},{p},{s},not computed")
        lines.append(f"mean,{self.mean_psnr},{self.mean_ssim},not computed")
        return "\n".join(lines) + "\n"

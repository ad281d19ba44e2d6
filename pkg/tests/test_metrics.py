import json
import math

import numpy as np
import pytest

from cfield.errors import InputDomainError
from cfield.metrics import MetricReport, psnr, ssim


def naive_ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Windowed-statistics oracle: explicit double loop over window
    positions with a locally applied Gaussian weight."""
    r = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    c1, c2 = k1**2, k2**2
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, channels = a.shape
    values = []
    for ch in range(channels):
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                pa = a[i : i + window, j : j + window, ch]
                pb = b[i : i + window, j : j + window, ch]
                mu_a = (kernel * pa).sum()
                mu_b = (kernel * pb).sum()
                var_a = (kernel * pa * pa).sum() - mu_a**2
                var_b = (kernel * pb * pb).sum() - mu_b**2
                cov = (kernel * pa * pb).sum() - mu_a * mu_b
                values.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
    return float(np.mean(values))


class TestPsnr:
    def test_identical_images(self, rng):
        a = rng.random((8, 8, 3))
        assert psnr(a, a.copy()) == math.inf

    def test_black_vs_white(self):
        assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == pytest.approx(0.0)

    def test_uniform_half_gray(self):
        # Oracle: 10*log10(1/0.25)
        value = psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.5))
        assert value == pytest.approx(10 * math.log10(1 / 0.25), abs=1e-12)
        assert value == pytest.approx(6.0206, abs=1e-4)

    def test_symmetry(self, rng):
        a, b = rng.random((5, 7, 3)), rng.random((5, 7, 3))
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)

    def test_monotone_in_error(self, rng):
        a = rng.random((6, 6, 3))
        small = np.clip(a + 0.05, 0, 1)
        large = np.clip(a + 0.2, 0, 1)
        assert psnr(a, small) > psnr(a, large)

    def test_dimension_mismatch(self):
        with pytest.raises(InputDomainError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestSsim:
    def test_identity_exact_one(self, rng):
        a = rng.random((16, 16, 3))
        assert ssim(a, a.copy()) == 1.0

    def test_constant_images(self):
        a = np.full((12, 12), 0.3)
        assert ssim(a, a.copy()) == pytest.approx(1.0)

    def test_matches_naive_oracle(self, rng):
        a = rng.random((16, 14, 3))
        b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-6)

    def test_matches_naive_oracle_grayscale(self, rng):
        a = rng.random((13, 13))
        b = rng.random((13, 13))
        assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-6)

    def test_symmetry(self, rng):
        a, b = rng.random((14, 14, 3)), rng.random((14, 14, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_in_range(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_window_too_large(self):
        with pytest.raises(InputDomainError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestMetricReport:
    def test_accumulates_and_serializes(self, rng):
        report = MetricReport()
        a = rng.random((16, 16, 3))
        b = np.clip(a + 0.1, 0, 1)
        report.add(a, b)
        report.add(a, a.copy())
        assert len(report.per_image_psnr) == 2
        data = json.loads(report.to_json())
        assert data["lpips"] == "not computed"
        assert data["psnr"] == report.mean_psnr
        assert len(data["per_image"]) == 2
        csv = report.to_csv_rows()
        assert csv.splitlines()[0] == "index,psnr,ssim,lpips"
        assert csv.splitlines()[-1].startswith("mean,")

    def test_infinite_psnr_serializes(self, rng):
        report = MetricReport()
        a = rng.random((16, 16, 3))
        report.add(a, a.copy())
        assert report.mean_psnr == math.inf
        assert "Infinity" in report.to_json()

import json

import numpy as np
import pytest

from cfield.correspondence import (CorrespondenceMask, DepthMap, MaskConfig,
                                   derive_mask, save_mask, subsample_mask)
from cfield.errors import BehindCameraError, InputDomainError
from cfield.geometry import project, unproject
from cfield.imgio import read_png
from cfield.scene import corrupt_depth, DepthCorruption, preset_scene, render_oracle

from conftest import orbit_camera


def brute_force_mask(source, targets, config):
    """Independent per-pixel double-loop reference for the mask derivation:
    unproject with the source depth, project into each target, look the
    target depth up at the nearest pixel center, and compare."""
    src_cam, src_depth = source
    h, w = src_depth.shape
    in_mask = np.zeros((h, w), dtype=bool)
    for row in range(h):
        for col in range(w):
            if not src_depth.validity[row, col]:
                continue
            point = unproject(src_cam, col + 0.5, row + 0.5, src_depth.values[row, col])
            for cam, depth in targets:
                try:
                    u, v, s_proj = project(cam, point)
                except BehindCameraError:
                    continue
                m, n = int(np.floor(u)), int(np.floor(v))
                if not (0 <= m < w and 0 <= n < h):
                    continue
                if not depth.validity[n, m]:
                    continue
                if abs(depth.values[n, m] - s_proj) < config.alpha:
                    in_mask[row, col] = True
                    break
    return in_mask


def two_view_sphere(res=32, angles=(0.0, 0.5)):
    spec = preset_scene("sphere1")
    views = []
    for a in angles:
        cam = orbit_camera(a, radius=4.0, width=res, height_px=res)
        frame = render_oracle(spec, cam)
        views.append((cam, frame.depth))
    return views


class TestDepthMap:
    def test_rejects_nonpositive_valid_depth(self):
        with pytest.raises(InputDomainError):
            DepthMap(np.zeros((2, 2)), np.ones((2, 2), dtype=bool))

    def test_dense_constructor_masks_invalid(self):
        d = DepthMap.dense(np.array([[1.0, 0.0], [np.inf, 2.0]]))
        np.testing.assert_array_equal(d.validity, [[True, False], [False, True]])

    def test_shape_mismatch(self):
        with pytest.raises(InputDomainError):
            DepthMap(np.ones((2, 2)), np.ones((3, 2), dtype=bool))


class TestDeriveMask:
    def test_identity_correspondence(self):
        # Same camera, same depth: every valid pixel matches itself exactly.
        (cam, depth), _ = two_view_sphere()
        mask = derive_mask((cam, depth), [(cam, depth)], MaskConfig(alpha=0.1))
        np.testing.assert_array_equal(mask.in_mask, depth.validity)
        np.testing.assert_array_equal(mask.depth_error[mask.in_mask], 0.0)
        assert np.all(mask.target_view[mask.in_mask] == 0)

    def test_uniform_threshold_violation_empties_mask(self):
        (cam, depth), _ = two_view_sphere()
        alpha = 0.1
        shifted = DepthMap(depth.values + 2 * alpha, depth.validity.copy())
        mask = derive_mask((cam, depth), [(cam, shifted)], MaskConfig(alpha=alpha))
        assert mask.count() == 0

    @pytest.mark.parametrize("alpha", [0.01, 0.1])
    def test_matches_brute_force_oracle(self, alpha):
        views = two_view_sphere(res=32)
        config = MaskConfig(alpha=alpha)
        mask = derive_mask(views[0], [views[1]], config)
        reference = brute_force_mask(views[0], [views[1]], config)
        np.testing.assert_array_equal(mask.in_mask, reference)

    def test_matches_brute_force_on_corrupted_depth(self):
        views = two_view_sphere(res=32)
        corrupted = [(cam, corrupt_depth(d, DepthCorruption(multiplicative_noise_std=0.05, seed=i)))
                     for i, (cam, d) in enumerate(views)]
        config = MaskConfig(alpha=0.1)
        mask = derive_mask(corrupted[0], [corrupted[1]], config)
        reference = brute_force_mask(corrupted[0], [corrupted[1]], config)
        np.testing.assert_array_equal(mask.in_mask, reference)

    def test_threshold_monotonicity(self):
        views = two_view_sphere(res=24, angles=(0.0, 0.35))
        previous = None
        for alpha in (0.01, 0.05, 0.2, 1.0):
            mask = derive_mask(views[0], [views[1]], MaskConfig(alpha=alpha))
            if previous is not None:
                assert np.all(previous.in_mask <= mask.in_mask)
            previous = mask

    def test_first_matching_view_recorded(self):
        (cam, depth), _ = two_view_sphere()
        mask = derive_mask((cam, depth), [(cam, depth), (cam, depth)], MaskConfig(alpha=0.1))
        assert np.all(mask.target_view[mask.in_mask] == 0)

    def test_in_mask_fields_consistent(self):
        views = two_view_sphere()
        mask = derive_mask(views[0], [views[1]], MaskConfig(alpha=0.1))
        inside = mask.in_mask
        assert np.all(mask.target_view[inside] >= 0)
        assert np.all(mask.target_pixel[inside] >= 0)
        assert np.all(np.isfinite(mask.depth_error[inside]))
        assert np.all(mask.depth_error[inside] < 0.1)
        assert np.all(mask.target_view[~inside] == -1)
        assert np.all(np.isnan(mask.depth_error[~inside]))

    def test_dimension_mismatch(self):
        views = two_view_sphere(res=16)
        other = two_view_sphere(res=24)[1]
        with pytest.raises(InputDomainError):
            derive_mask(views[0], [other], MaskConfig(alpha=0.1))

    def test_mutually_visible_pixels_fully_covered(self):
        """Noiseless oracle depth: every mutually visible surface pixel joins
        the mask once alpha clears the reprojection quantization error.

        Visibility oracle: analytic occlusion test against the sphere; the
        quantization bound is measured from analytic depth at the rounded
        target pixel."""
        from cfield.geometry import pixel_ray

        views = two_view_sphere(res=32, angles=(0.0, 0.4))
        (src_cam, src_depth), (tgt_cam, tgt_depth) = views
        center, radius = np.zeros(3), 1.0

        visible = []
        quant_errors = []
        h, w = src_depth.shape
        for row in range(h):
            for col in range(w):
                if not src_depth.validity[row, col]:
                    continue
                point = unproject(src_cam, col + 0.5, row + 0.5, src_depth.values[row, col])
                try:
                    u, v, s_proj = project(tgt_cam, point)
                except BehindCameraError:
                    continue
                m, n = int(np.floor(u)), int(np.floor(v))
                if not (0 <= m < w and 0 <= n < h) or not tgt_depth.validity[n, m]:
                    continue
                # occlusion test: the target ray toward the point reaches it
                origin = tgt_cam.pose.position
                direction = (point - origin) / np.linalg.norm(point - origin)
                oc = origin - center
                b = float(oc @ direction)
                disc = b * b - float(oc @ oc) + radius**2
                t_hit = -b - np.sqrt(max(disc, 0.0))
                if abs(t_hit - np.linalg.norm(point - origin)) > 1e-6:
                    continue  # occluded
                visible.append((row, col))
                quant_errors.append(abs(tgt_depth.values[n, m] - s_proj))

        assert len(visible) > 100
        alpha = max(quant_errors) * 1.05 + 1e-9
        mask = derive_mask(views[0], [views[1]], MaskConfig(alpha=alpha))
        covered = [mask.in_mask[r, c] for r, c in visible]
        assert all(covered)

    def test_deterministic(self):
        views = two_view_sphere()
        a = derive_mask(views[0], [views[1]], MaskConfig(alpha=0.1))
        b = derive_mask(views[0], [views[1]], MaskConfig(alpha=0.1))
        np.testing.assert_array_equal(a.in_mask, b.in_mask)
        np.testing.assert_array_equal(a.target_pixel, b.target_pixel)


class TestSubsample:
    def _mask_with_members(self, count=1000, shape=(40, 40)):
        in_mask = np.zeros(shape, dtype=bool)
        in_mask.ravel()[:count] = True
        tv = np.where(in_mask, 0, -1).astype(np.int32)
        tp = np.where(in_mask[:, :, None], 3, -1).astype(np.int32)
        err = np.where(in_mask, 0.01, np.nan)
        return CorrespondenceMask(in_mask, tv, tp, err)

    def test_portion_one_identity(self):
        mask = self._mask_with_members()
        out = subsample_mask(mask, 1.0, seed=0)
        np.testing.assert_array_equal(out.in_mask, mask.in_mask)

    def test_portion_zero_empty(self):
        out = subsample_mask(self._mask_with_members(), 0.0, seed=0)
        assert out.count() == 0
        assert np.all(out.target_view == -1)

    def test_half_portion_count(self):
        out = subsample_mask(self._mask_with_members(count=1000), 0.5, seed=3)
        assert out.count() == 500

    def test_rounding(self):
        out = subsample_mask(self._mask_with_members(count=5), 0.5, seed=3)
        assert out.count() == round(0.5 * 5)

    def test_subset_and_fields_cleared(self):
        mask = self._mask_with_members()
        out = subsample_mask(mask, 0.3, seed=9)
        assert np.all(mask.in_mask[out.in_mask])
        dropped = mask.in_mask & ~out.in_mask
        assert np.all(out.target_view[dropped] == -1)
        assert np.all(np.isnan(out.depth_error[dropped]))
        assert np.all(out.depth_error[out.in_mask] == 0.01)

    def test_seeded_determinism(self):
        mask = self._mask_with_members()
        a = subsample_mask(mask, 0.4, seed=11)
        b = subsample_mask(mask, 0.4, seed=11)
        np.testing.assert_array_equal(a.in_mask, b.in_mask)

    def test_invalid_portion(self):
        with pytest.raises(InputDomainError):
            subsample_mask(self._mask_with_members(), 1.5, seed=0)


class TestExport:
    def test_png_and_sidecar(self, tmp_path):
        views = two_view_sphere()
        config = MaskConfig(alpha=0.1, portion=1.0)
        mask = derive_mask(views[0], [views[1]], config)
        save_mask(mask, tmp_path / "mask.png", config, seed=4)
        img = read_png(tmp_path / "mask.png")
        assert img.ndim == 2  # grayscale mask
        np.testing.assert_array_equal(img == 1.0, mask.in_mask)
        assert set(np.unique((img * 255).round())) <= {0.0, 255.0}
        sidecar = json.loads((tmp_path / "mask.json").read_text())
        assert sidecar["alpha"] == 0.1
        assert sidecar["portion"] == 1.0
        assert sidecar["seed"] == 4
        assert sidecar["coverage"] == pytest.approx(mask.coverage)


class TestMaskConfig:
    def test_zero_alpha_allowed_and_masks_nothing(self):
        # strict < comparison: alpha=0 admits no pixel at all
        views = two_view_sphere()
        mask = derive_mask(views[0], [views[1]], MaskConfig(alpha=0.0))
        assert mask.count() == 0

    def test_negative_alpha_rejected(self):
        with pytest.raises(InputDomainError):
            MaskConfig(alpha=-0.1)

    def test_portion_range(self):
        with pytest.raises(InputDomainError):
            MaskConfig(portion=-0.2)

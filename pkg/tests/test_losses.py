import json

import numpy as np
import pytest

from cfield.errors import InputDomainError
from cfield.losses import (LossWeights, PropositionCheckConfig,
                           check_appearance_bound, check_geometry_bound,
                           masked_photometric_loss, photometric_loss,
                           scale_invariant_depth_loss)


class TestPhotometricLoss:
    def test_zero_residual(self, rng):
        x = rng.random((10, 3))
        loss, grad = photometric_loss(x, x.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_single_ray_unit_error(self):
        loss, grad = photometric_loss(np.ones((1, 3)), np.zeros((1, 3)))
        assert loss == pytest.approx(3.0)
        np.testing.assert_allclose(grad, 2.0)

    def test_matches_naive_accumulation(self, rng):
        pred = rng.random((100, 3))
        target = rng.random((100, 3))
        loss, grad = photometric_loss(pred, target)
        # Oracle: per-ray python accumulation.
        acc = 0.0
        for p, t in zip(pred, target):
            acc += float(((p - t) ** 2).sum())
        assert loss == pytest.approx(acc / 100, abs=1e-12)
        np.testing.assert_allclose(grad, 2 * (pred - target) / 100, atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(InputDomainError):
            photometric_loss(np.ones((3, 3)), np.ones((4, 3)))

    def test_gradient_matches_finite_differences(self, rng):
        pred = rng.random((6, 3))
        target = rng.random((6, 3))
        _, grad = photometric_loss(pred, target)
        h = 1e-6
        for i in range(6):
            for c in range(3):
                pred[i, c] += h
                up, _ = photometric_loss(pred, target)
                pred[i, c] -= 2 * h
                down, _ = photometric_loss(pred, target)
                pred[i, c] += h
                assert grad[i, c] == pytest.approx((up - down) / (2 * h), rel=1e-4)


class TestMaskedPhotometricLoss:
    def test_all_in_mask_reduces_to_photometric(self, rng):
        pred = rng.random((20, 3))
        target = rng.random((20, 3))
        plain, plain_grad = photometric_loss(pred, target)
        res = masked_photometric_loss(pred, target, np.ones(20, dtype=bool), LossWeights())
        assert res.total == pytest.approx(plain, abs=1e-12)
        np.testing.assert_allclose(res.grad, plain_grad, atol=1e-15)
        assert res.off_mask_term == 0.0

    def test_lambda_one_equal_groups(self, rng):
        pred = rng.random((20, 3))
        target = rng.random((20, 3))
        mask = np.zeros(20, dtype=bool)
        mask[:10] = True
        weights = LossWeights(lambda_offmask=1.0)
        res = masked_photometric_loss(pred, target, mask, weights)
        plain, _ = photometric_loss(pred, target)
        # equal group sizes: sum of two half-means = twice the overall mean... each
        # normalized by 10 while the plain loss divides by 20.
        assert res.total == pytest.approx(2 * plain, abs=1e-12)

    def test_matches_two_group_oracle(self, rng):
        pred = rng.random((31, 3))
        target = rng.random((31, 3))
        mask = rng.random(31) < 0.4
        weights = LossWeights(lambda_offmask=0.1)
        res = masked_photometric_loss(pred, target, mask, weights)
        # Oracle: explicit group split.
        sq = ((pred - target) ** 2).sum(axis=1)
        expect = sq[mask].mean() + 0.1 * sq[~mask].mean()
        assert res.total == pytest.approx(expect, abs=1e-12)

    def test_lambda_zero_off_mask_gradient_zero(self, rng):
        pred = rng.random((8, 3))
        target = rng.random((8, 3))
        mask = np.array([True] * 4 + [False] * 4)
        res = masked_photometric_loss(pred, target, mask, LossWeights(lambda_offmask=0.0))
        np.testing.assert_array_equal(res.grad[~mask], 0.0)
        assert np.any(res.grad[mask] != 0.0)

    def test_empty_group_contributes_zero(self, rng):
        pred = rng.random((5, 3))
        target = rng.random((5, 3))
        res = masked_photometric_loss(pred, target, np.zeros(5, dtype=bool),
                                      LossWeights(lambda_offmask=0.5))
        assert res.in_mask_term == 0.0
        assert res.total == pytest.approx(0.5 * ((pred - target) ** 2).sum(axis=1).mean())

    def test_gradient_matches_finite_differences(self, rng):
        pred = rng.random((7, 3))
        target = rng.random((7, 3))
        mask = rng.random(7) < 0.5
        weights = LossWeights(lambda_offmask=0.3)
        res = masked_photometric_loss(pred, target, mask, weights)
        h = 1e-6
        for i in range(7):
            for c in range(3):
                pred[i, c] += h
                up = masked_photometric_loss(pred, target, mask, weights).total
                pred[i, c] -= 2 * h
                down = masked_photometric_loss(pred, target, mask, weights).total
                pred[i, c] += h
                assert res.grad[i, c] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


class TestScaleInvariantDepthLoss:
    def test_identity_and_pure_scale(self, rng):
        ref = rng.uniform(0.5, 5.0, size=64)
        assert scale_invariant_depth_loss(ref, ref)[0] == pytest.approx(0.0, abs=1e-15)
        for c in (1e-2, 0.5, 7.0, 1e2):
            loss, _ = scale_invariant_depth_loss(c * ref, ref)
            assert loss == pytest.approx(0.0, abs=1e-9)

    def test_matches_direct_formula(self, rng):
        pred = rng.uniform(0.2, 8.0, size=64)
        ref = rng.uniform(0.2, 8.0, size=64)
        loss, grad = scale_invariant_depth_loss(pred, ref)
        # Oracle: the printed formula, term by term.
        n = 64
        inner = np.mean(np.log(ref) - np.log(pred))
        expect = np.sum((np.log(pred) - np.log(ref) + inner) ** 2) / (2 * n)
        assert loss == pytest.approx(expect, abs=1e-12)
        h = 1e-6
        for i in range(0, n, 7):
            pred[i] += h
            up, _ = scale_invariant_depth_loss(pred, ref)
            pred[i] -= 2 * h
            down, _ = scale_invariant_depth_loss(pred, ref)
            pred[i] += h
            assert grad[i] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-10)

    def test_scale_invariance_property(self, rng):
        for _ in range(50):
            pred = rng.uniform(0.1, 10.0, size=16)
            ref = rng.uniform(0.1, 10.0, size=16)
            c = 10.0 ** rng.uniform(-2, 2)
            base, _ = scale_invariant_depth_loss(pred, ref)
            scaled, _ = scale_invariant_depth_loss(c * pred, ref)
            assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(InputDomainError):
            scale_invariant_depth_loss(np.array([1.0, -0.5]), np.array([1.0, 1.0]))
        with pytest.raises(InputDomainError):
            scale_invariant_depth_loss(np.array([1.0, 1.0]), np.array([0.0, 1.0]))

    def test_nonnegative(self, rng):
        for _ in range(100):
            pred = rng.uniform(0.1, 10.0, size=9)
            ref = rng.uniform(0.1, 10.0, size=9)
            assert scale_invariant_depth_loss(pred, ref)[0] >= 0.0


class TestPropositionBounds:
    def test_all_equal_appearance(self):
        # Degenerate check by hand: both sides collapse to 0 >= -eps/2.
        c = np.array([0.3, 0.4, 0.5])
        lhs = 0.0
        rhs = 0.25 * 0.0 - 0.05 / 2
        assert lhs >= rhs

    def test_one_sided_prediction_error(self):
        # pred_a off by a unit vector, everything else exact; the bound keeps
        # measurable slack.
        pred_a, pred_b = np.array([1.0, 0, 0]), np.zeros(3)
        true_a = true_b = np.zeros(3)
        lhs = np.sum((pred_a - true_a) ** 2) + np.sum((pred_b - true_b) ** 2)
        rhs = 0.25 * np.sum((pred_a - pred_b) ** 2) - 0.05 / 2
        assert lhs - rhs == pytest.approx(0.75 + 0.025)

    def test_appearance_fuzz(self):
        report = check_appearance_bound(PropositionCheckConfig(trials=2000), seed=0)
        assert report.violations == 0
        assert report.trials == 2000
        assert report.worst_margin >= -1e-12

    def test_geometry_fuzz(self):
        report = check_geometry_bound(PropositionCheckConfig(trials=2000), seed=0)
        assert report.violations == 0
        assert report.worst_margin >= -1e-12

    def test_exact_geometry_prediction(self):
        # Exact predictions: LHS is 0 and the precondition forces RHS <= 0.
        eps_s = 0.05
        ref_a, ref_b = 2.0, 2.0 + np.sqrt(eps_s) * 0.9
        lhs = 0.0
        rhs = 0.25 * (ref_a - ref_b) ** 2 - eps_s / 2
        assert lhs >= rhs

    def test_report_json(self):
        report = check_appearance_bound(PropositionCheckConfig(trials=100), seed=1)
        data = json.loads(report.to_json())
        assert set(data) == {"name", "trials", "violations", "worst_margin", "passed"}
        assert data["passed"] is True


class TestConfigValidation:
    def test_loss_weights(self):
        with pytest.raises(InputDomainError):
            LossWeights(lambda_offmask=1.5)
        with pytest.raises(InputDomainError):
            LossWeights(beta_depth=-0.1)
        with pytest.raises(InputDomainError):
            LossWeights(patch_size=1)

    def test_proposition_config(self):
        with pytest.raises(InputDomainError):
            PropositionCheckConfig(epsilon_c=0.0)

"""Training losses and the consistency-bound property checkers.

The masked photometric loss normalizes each group (in-mask / off-mask) by
its own ray count, so the off-mask weight keeps the same meaning whatever
the mask coverage is. A group with zero rays contributes exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError


@dataclass(frozen=True)
class LossWeights:
    lambda_offmask: float = 0.1
    beta_depth: float = 0.1
    patch_size: int = 8

    def __post_init__(self):
        if not (0.0 <= self.lambda_offmask <= 1.0):
            raise InputDomainError("lambda_offmask must be in [0, 1]")
        if self.beta_depth < 0:
            raise InputDomainError("beta_depth must be nonnegative")
        if self.patch_size < 2:
            raise InputDomainError("patch_size must be at least 2")


@dataclass(frozen=True)
class PropositionCheckConfig:
    epsilon_c: float = 0.05
    epsilon_s: float = 0.05
    trials: int = 100_000

    def __post_init__(self):
        if self.epsilon_c <= 0 or self.epsilon_s <= 0:
            raise InputDomainError("thresholds must be positive")


def photometric_loss(predicted: np.ndarray, target: np.ndarray):
    """Mean over rays of the squared L2 color error.

    Returns (loss, gradient w.r.t. predicted), gradient shape (B, 3).
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape or predicted.ndim != 2 or predicted.shape[0] < 1:
        raise InputDomainError(
            f"predicted/target must be matching (B, 3) batches, got {predicted.shape} vs {target.shape}"
        )
    diff = predicted - target
    loss = float(np.sum(diff * diff) / predicted.shape[0])
    grad = 2.0 * diff / predicted.shape[0]
    return loss, grad


@dataclass(frozen=True)
class MaskedLossResult:
    total: float
    grad: np.ndarray  # (B, 3) w.r.t. predicted
    in_mask_term: float
    off_mask_term: float  # off-mask mean squared error, before the lambda weight


def masked_photometric_loss(predicted: np.ndarray, target: np.ndarray,
                            in_mask: np.ndarray, weights: LossWeights) -> MaskedLossResult:
    """Correspondence-weighted photometric loss:

        mean_sq_err(in-mask rays) + lambda * mean_sq_err(off-mask rays)

    with each term normalized by its own ray count.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    in_mask = np.asarray(in_mask, dtype=bool)
    if predicted.shape != target.shape or in_mask.shape != predicted.shape[:1]:
        raise InputDomainError("predicted, target and in_mask batch sizes must match")
    if predicted.shape[0] < 1:
        raise InputDomainError("need at least one ray")

    diff = predicted - target
    sq = np.sum(diff * diff, axis=1)
    n_in = int(in_mask.sum())
    n_off = int(in_mask.size - n_in)
    in_term = float(sq[in_mask].sum() / n_in) if n_in else 0.0
    off_term = float(sq[~in_mask].sum() / n_off) if n_off else 0.0

    grad = np.zeros_like(diff)
    if n_in:
        grad[in_mask] = 2.0 * diff[in_mask] / n_in
    if n_off:
        grad[~in_mask] = weights.lambda_offmask * 2.0 * diff[~in_mask] / n_off
    return MaskedLossResult(
        total=in_term + weights.lambda_offmask * off_term,
        grad=grad,
        in_mask_term=in_term,
        off_mask_term=off_term,
    )


def scale_invariant_depth_loss(predicted: np.ndarray, reference: np.ndarray):
    """Scale-invariant mean squared log-depth error over a patch:

        D = 1/(2N) * sum_k (log p_k - log r_k + 1/N * sum_j (log r_j - log p_j))^2

    Invariant under global rescaling of the predicted depths. Returns
    (loss, gradient w.r.t. predicted).
    """
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    if predicted.shape != reference.shape or predicted.size < 1:
        raise InputDomainError("patches must be nonempty and matching in size")
    if np.any(predicted <= 0) or np.any(reference <= 0):
        raise InputDomainError("depths must be positive")
    n = predicted.size
    e = np.log(predicted) - np.log(reference)
    centered = e - e.mean()
    loss = float(np.sum(centered * centered) / (2 * n))
    grad = centered / (n * predicted)
    return loss, grad


@dataclass(frozen=True)
class PropositionReport:
    name: str
    trials: int
    violations: int
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "trials": self.trials,
                "violations": self.violations,
                "worst_margin": self.worst_margin,
                "passed": self.passed,
            },
            indent=2,
        )


_FLOAT_SLACK = 1e-12


def check_appearance_bound(config: PropositionCheckConfig, seed: int = 0) -> PropositionReport:
    """Fuzz the appearance-consistency bound: for ground-truth colors within
    epsilon_c of each other (squared L2),

        |pred_a - true_a|^2 + |pred_b - true_b|^2
            >= 1/4 |pred_a - pred_b|^2 - epsilon_c / 2

    for arbitrary predictions pred_a, pred_b in [0,1]^3.
    """
    rng = np.random.default_rng(seed)
    n = config.trials
    pred_a = rng.random((n, 3))
    pred_b = rng.random((n, 3))
    true_a = rng.random((n, 3))
    # Perturb within the epsilon_c ball; clipping to [0,1]^3 only shrinks it.
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = np.sqrt(config.epsilon_c) * rng.random(n) ** (1.0 / 3.0)
    true_b = np.clip(true_a + radius[:, None] * direction, 0.0, 1.0)

    lhs = np.sum((pred_a - true_a) ** 2, axis=1) + np.sum((pred_b - true_b) ** 2, axis=1)
    rhs = 0.25 * np.sum((pred_a - pred_b) ** 2, axis=1) - config.epsilon_c / 2.0
    margin = lhs - rhs
    return PropositionReport(
        name="appearance_consistency_bound",
        trials=n,
        violations=int(np.sum(margin < -_FLOAT_SLACK)),
        worst_margin=float(margin.min()),
    )


def check_geometry_bound(config: PropositionCheckConfig, seed: int = 0) -> PropositionReport:
    """Fuzz the geometry-consistency bound: for reference depths with
    |ref_a - ref_b|^2 <= epsilon_s,

        |pred_a - ref_a|^2 + |pred_b - ref_b|^2
            >= 1/4 |pred_a - pred_b|^2 - epsilon_s / 2.
    """
    rng = np.random.default_rng(seed)
    n = config.trials
    pred_a = rng.uniform(0.1, 10.0, n)
    pred_b = rng.uniform(0.1, 10.0, n)
    ref_a = rng.uniform(0.1, 10.0, n)
    # Clipping to positive depths can only shrink |ref_a - ref_b|.
    ref_b = np.maximum(ref_a + np.sqrt(config.epsilon_s) * rng.uniform(-1.0, 1.0, n), 1e-3)

    lhs = (pred_a - ref_a) ** 2 + (pred_b - ref_b) ** 2
    rhs = 0.25 * (pred_a - pred_b) ** 2 - config.epsilon_s / 2.0
    margin = lhs - rhs
    return PropositionReport(
        name="geometry_consistency_bound",
        trials=n,
        violations=int(np.sum(margin < -_FLOAT_SLACK)),
        worst_margin=float(margin.min()),
    )

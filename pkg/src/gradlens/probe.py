"""Unbiased squared-gradient-norm estimation via batch splitting.

The squared norm of a batch-mean gradient overestimates the true squared
norm by Tr(Cov)/B, which is large whenever per-sample gradients are noisy.
Splitting the batch into two independent halves and taking the inner
product of the half means removes that bias entirely: the cross product's
expectation is exactly the squared norm (and individual samples may be
negative). Estimates are smoothed per task with an EMA on the squared
stream; the reported unsquared norm is the zero-truncated square root of
the EMA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradlens import kernels
from gradlens.errors import ConfigError, ContractError, ShapeError
from gradlens.policy import ParamVector


@dataclass
class GradNormEstimate:
    task_id: str
    raw_cross: float
    sq_norm_ema: float
    norm: float
    step: int
    subset: tuple


def split_halves(groups: list) -> tuple[list, list]:
    """Deterministic positional split into ceil(n/2) and floor(n/2) halves."""
    if len(groups) < 2:
        raise ContractError("need at least 2 groups to split")
    cut = (len(groups) + 1) // 2
    return list(groups[:cut]), list(groups[cut:])


def cross_product_sqnorm(g1: ParamVector, g2: ParamVector) -> float:
    """Inner product of two independent half-batch gradient means.

    Unbiased for the true squared gradient norm; may be negative.
    """
    if len(g1) != len(g2):
        raise ShapeError("half-batch gradients differ in length")
    return g1.dot(g2)


def naive_sqnorm(g_hat: ParamVector) -> float:
    """Squared norm of the full-batch mean; biased upward, for contrast."""
    return g_hat.dot(g_hat)


def unsquared_norm(sq_estimate: float) -> float:
    return float(np.sqrt(max(sq_estimate, 0.0)))


def ema_update(prev: float | None, value: float, coeff: float) -> float:
    """One EMA step; the first observation initializes the average."""
    if not 0.0 <= coeff < 1.0:
        raise ConfigError("EMA coefficient must be in [0, 1)")
    if prev is None:
        return float(value)
    return coeff * prev + (1.0 - coeff) * value


def subset_gradient(grad: ParamVector, subset) -> ParamVector:
    """Restrict a gradient to the named segments, zeroing the rest.

    Length and segment metadata are preserved so norms over the subset
    compose with the full-vector operations.
    """
    names = grad.segment_names()
    wanted = tuple(subset)
    for name in wanted:
        if name not in names:
            raise ConfigError(f"unknown segment {name!r}; have {names}")
    values = np.zeros_like(grad.values)
    for name in wanted:
        sl = grad.segment_slice(name)
        values[sl] = grad.values[sl]
    return grad.with_values(values)


def resolve_subset(segments: tuple, subset) -> tuple:
    """Expand the 'last' / 'all' shorthands against a segment tuple."""
    names = tuple(s.name for s in segments)
    if subset == "all":
        return names
    if subset == "last":
        return (names[-1],)
    return tuple(subset)


class NormTracker:
    """Per-task EMA registry over the cross-product squared-norm stream.

    Single-writer: the training loop calls ``update`` once per (step, task)
    with a fresh estimate; readers may snapshot values at any time. Tasks
    without an observation yet report norm 0.0.
    """

    def __init__(self, task_ids, ema_coeff: float = 0.95, subset: tuple = ()):
        if not 0.0 <= ema_coeff < 1.0:
            raise ConfigError("EMA coefficient must be in [0, 1)")
        self.ema_coeff = ema_coeff
        self.subset = tuple(subset)
        self._ema: dict[str, float | None] = {tid: None for tid in task_ids}

    def update(self, task_id: str, raw_cross: float, step: int) -> GradNormEstimate:
        if task_id not in self._ema:
            raise ContractError(f"task {task_id!r} not registered")
        ema = ema_update(self._ema[task_id], raw_cross, self.ema_coeff)
        self._ema[task_id] = ema
        return GradNormEstimate(
            task_id=task_id,
            raw_cross=float(raw_cross),
            sq_norm_ema=float(ema),
            norm=unsquared_norm(ema),
            step=step,
            subset=self.subset,
        )

    def sq_norm(self, task_id: str) -> float:
        ema = self._ema[task_id]
        return 0.0 if ema is None else float(ema)

    def norm(self, task_id: str) -> float:
        return unsquared_norm(self.sq_norm(task_id))

    def norms(self, task_ids) -> np.ndarray:
        return np.array([self.norm(tid) for tid in task_ids])


def simulate_gaussian_estimators(
    mean: np.ndarray,
    batch_size: int,
    n_batches: int,
    rng: np.random.Generator,
) -> dict:
    """Monte Carlo comparison of the cross-product and naive estimators.

    Per-sample gradients are N(mean, I). Returns empirical means and
    standard errors of both estimators plus the analytic targets
    ||mean||^2 and ||mean||^2 + dim/batch_size.
    """
    mean = np.asarray(mean, dtype=np.float64)
    dim = mean.shape[0]
    samples = rng.standard_normal((n_batches, batch_size, dim)) + mean
    cross, naive = kernels.cross_and_naive(samples)
    sq = float(mean @ mean)
    return {
        "cross_mean": float(np.mean(cross)),
        "cross_se": float(np.std(cross, ddof=1) / np.sqrt(n_batches)),
        "naive_mean": float(np.mean(naive)),
        "naive_se": float(np.std(naive, ddof=1) / np.sqrt(n_batches)),
        "target_sq_norm": sq,
        "target_naive": sq + dim / batch_size,
        "bias_term": dim / batch_size,
        "n_batches": int(n_batches),
    }

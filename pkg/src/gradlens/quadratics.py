"""Quadratic objectives where the norm-vs-progress ratio bound is exact.

A diagonal quadratic f(x) = 0.5 (x - x*)' diag(lambda) (x - x*) is
beta-smooth with beta = max(lambda) and mu-PL with mu = min(lambda), and

    2 mu <= ||grad f(x)||^2 / (f(x) - f*) <= 2 beta

holds with equality at the extreme eigenvectors. Gradient-descent traces
here expose per-step suboptimality, squared gradient norm, and gain
(suboptimality decrease), which makes the within-task proportionality and
its cross-task breakdown directly checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradlens import kernels
from gradlens.errors import ConfigError, DomainError, ShapeError
from gradlens.metrics import StepRecord


@dataclass(frozen=True)
class QuadraticProblem:
    eigenvalues: tuple
    optimum: tuple

    def __post_init__(self):
        eigs = np.asarray(self.eigenvalues, dtype=np.float64)
        opt = np.asarray(self.optimum, dtype=np.float64)
        if eigs.ndim != 1 or eigs.shape != opt.shape:
            raise ShapeError("eigenvalues and optimum must be 1-D and equal length")
        if (eigs <= 0).any():
            raise ConfigError("all eigenvalues must be > 0")
        object.__setattr__(self, "eigenvalues", tuple(float(v) for v in eigs))
        object.__setattr__(self, "optimum", tuple(float(v) for v in opt))

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def mu(self) -> float:
        return min(self.eigenvalues)

    @property
    def beta(self) -> float:
        return max(self.eigenvalues)

    def _delta(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeError(f"x must have shape ({self.dim},)")
        return x - np.asarray(self.optimum)


def value(problem: QuadraticProblem, x: np.ndarray) -> float:
    delta = problem._delta(x)
    return 0.5 * float(np.sum(np.asarray(problem.eigenvalues) * delta * delta))


def grad(problem: QuadraticProblem, x: np.ndarray) -> np.ndarray:
    return np.asarray(problem.eigenvalues) * problem._delta(x)


def suboptimality(problem: QuadraticProblem, x: np.ndarray) -> float:
    return value(problem, x)  # min f = 0 by construction


def ratio(problem: QuadraticProblem, x: np.ndarray) -> float:
    """||grad f||^2 / (f - f*); always within [2 mu, 2 beta]."""
    gap = suboptimality(problem, x)
    if gap <= 0.0:
        raise DomainError("ratio undefined at the optimum")
    g = grad(problem, x)
    return float(g @ g) / gap


@dataclass
class GdTrace:
    suboptimality: np.ndarray  # (steps + 1,)
    sq_grad_norm: np.ndarray  # (steps + 1,)
    gain: np.ndarray  # (steps,): suboptimality[t] - suboptimality[t+1]


def gd_trace(
    problem: QuadraticProblem, x0: np.ndarray, step_size: float, steps: int
) -> GdTrace:
    """Plain gradient descent from x0, recording progress per step."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if step_size <= 0 or step_size >= 2.0 / problem.beta:
        raise ConfigError(
            f"step_size must lie in (0, 2/beta) = (0, {2.0 / problem.beta})"
        )
    delta0 = problem._delta(x0)
    eigs = np.asarray(problem.eigenvalues)
    subopt, sqnorm = kernels.quadratic_descent(eigs, delta0, step_size, steps)
    return GdTrace(
        suboptimality=subopt,
        sq_grad_norm=sqnorm,
        gain=subopt[:-1] - subopt[1:],
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class CrossTaskSummary:
    trace_a: GdTrace
    trace_b: GdTrace
    within_pearson_a: float
    within_pearson_b: float
    crossover_steps: list[int]


def cross_task_demo(
    problem_a: QuadraticProblem,
    problem_b: QuadraticProblem,
    x0_a: np.ndarray,
    x0_b: np.ndarray,
    step_size: float,
    steps: int,
) -> CrossTaskSummary:
    """Run both problems under one step size and compare norm vs gain.

    Within each trace, squared gradient norm and gain move together
    (both proportional to suboptimality). Across traces the link breaks:
    crossover_steps lists every recorded step where one problem shows the
    larger squared norm but the smaller gain.
    """
    trace_a = gd_trace(problem_a, x0_a, step_size, steps)
    trace_b = gd_trace(problem_b, x0_b, step_size, steps)
    crossovers = []
    for t in range(steps):
        na, nb = trace_a.sq_grad_norm[t], trace_b.sq_grad_norm[t]
        ga, gb = trace_a.gain[t], trace_b.gain[t]
        if (na > nb and ga < gb) or (nb > na and gb < ga):
            crossovers.append(t)
    return CrossTaskSummary(
        trace_a=trace_a,
        trace_b=trace_b,
        within_pearson_a=_pearson(trace_a.sq_grad_norm[:-1], trace_a.gain),
        within_pearson_b=_pearson(trace_b.sq_grad_norm[:-1], trace_b.gain),
        crossover_steps=crossovers,
    )


def trace_to_records(label: str, trace: GdTrace) -> list[StepRecord]:
    """Emit a descent trace in the training CSV schema.

    reward_mean carries the negated suboptimality so reward gains equal
    descent progress; abs_adv_mean carries the per-step gain.
    """
    records = []
    steps = trace.gain.shape[0]
    for t in range(steps):
        records.append(
            StepRecord(
                step=t,
                task_id=label,
                reward_mean=-float(trace.suboptimality[t]),
                abs_adv_mean=float(trace.gain[t]),
                sq_norm_est=float(trace.sq_grad_norm[t]),
                norm_est=float(np.sqrt(trace.sq_grad_norm[t])),
                sampler_prob=1.0,
                response_len=1,
                padding_len=0,
            )
        )
    return records

"""Learning-gain computation, smoothing, and post-hoc record analysis.

The learning gain at step t over window s is the forward-window mean minus
the backward-window mean of the reward series:

    gain(t) = mean(R[t+1 .. t+s]) - mean(R[t-s .. t-1])

Gains are computed on raw per-task reward observations (steps where the
task was actually sampled), indexed by observation count, so non-uniform
sampling does not dilute rare tasks. All analyses here are pure functions
of an immutable record log.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats

from gradlens import kernels
from gradlens.errors import BoundsError, ConfigError, DomainError

CSV_HEADER = (
    "step,task_id,reward_mean,abs_adv_mean,sq_norm_est,norm_est,"
    "sampler_prob,response_len,padding_len"
)


@dataclass
class StepRecord:
    step: int
    task_id: str
    reward_mean: float
    abs_adv_mean: float
    sq_norm_est: float
    norm_est: float
    sampler_prob: float
    response_len: int
    padding_len: int

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.step),
                self.task_id,
                repr(float(self.reward_mean)),
                repr(float(self.abs_adv_mean)),
                repr(float(self.sq_norm_est)),
                repr(float(self.norm_est)),
                repr(float(self.sampler_prob)),
                str(self.response_len),
                str(self.padding_len),
            ]
        )


def write_records_csv(path, records: list[StepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def read_records_csv(path) -> list[StepRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                StepRecord(
                    step=int(row["step"]),
                    task_id=row["task_id"],
                    reward_mean=float(row["reward_mean"]),
                    abs_adv_mean=float(row["abs_adv_mean"]),
                    sq_norm_est=float(row["sq_norm_est"]),
                    norm_est=float(row["norm_est"]),
                    sampler_prob=float(row["sampler_prob"]),
                    response_len=int(row["response_len"]),
                    padding_len=int(row["padding_len"]),
                )
            )
    return records


@dataclass
class GainReport:
    task_id: str
    eval_steps: list[int]
    gains: list[float]
    window: int

    def to_dict(self) -> dict:
        return asdict(self)


def learning_gain(rewards: np.ndarray, t: int, s: int) -> float:
    """Two-window reward difference around t; no extra smoothing."""
    if s < 1:
        raise ConfigError("gain window s must be >= 1")
    rewards = np.asarray(rewards, dtype=np.float64)
    n = rewards.shape[0]
    if t - s < 0 or t + s > n - 1:
        raise BoundsError(f"gain window [t-{s}, t+{s}] out of range at t={t}, n={n}")
    forward = rewards[t + 1 : t + s + 1]
    backward = rewards[t - s : t]
    return float(np.mean(forward) - np.mean(backward))


def gain_eval_steps(n: int, s: int, num_points: int) -> list[int]:
    """num_points evenly spaced interior indices of a length-n series.

    Spread over the full valid range [s, n-1-s] with endpoints included.
    """
    if num_points < 1:
        raise ConfigError("num_points must be >= 1")
    lo, hi = s, n - 1 - s
    if lo > hi:
        raise BoundsError(f"series of length {n} too short for window {s}")
    if num_points == 1:
        return [(lo + hi) // 2]
    positions = np.linspace(lo, hi, num_points)
    return [int(round(p)) for p in positions]


def _task_reward_series(records: list[StepRecord], task_id: str) -> np.ndarray:
    return np.array([r.reward_mean for r in records if r.task_id == task_id])


def gain_report(
    records: list[StepRecord], task_id: str, s: int, num_points: int = 3
) -> GainReport:
    """Learning gains for one task at evenly spaced interior observations."""
    series = _task_reward_series(records, task_id)
    steps = gain_eval_steps(series.shape[0], s, num_points)
    gains = [learning_gain(series, t, s) for t in steps]
    return GainReport(task_id=task_id, eval_steps=steps, gains=gains, window=s)


def ema_smooth(series: np.ndarray, coeff: float) -> np.ndarray:
    """Elementwise EMA with first-element passthrough."""
    if not 0.0 <= coeff < 1.0:
        raise ConfigError("EMA coefficient must be in [0, 1)")
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] == 0:
        return series.copy()
    return kernels.ema_series(series, coeff)


def effective_lr_ratio(sq_norm_a: float, sq_norm_b: float) -> float:
    """sqrt(sq_norm_a / sq_norm_b): the implied learning-rate multiplier."""
    if sq_norm_b <= 0:
        raise DomainError("denominator squared norm must be > 0")
    if sq_norm_a < 0:
        raise DomainError("numerator squared norm must be >= 0")
    return math.sqrt(sq_norm_a / sq_norm_b)


def dominance_report(records: list[StepRecord], threshold: float) -> set:
    """Tasks whose time-averaged squared-norm estimate exceeds
    threshold times the median task's value."""
    if threshold <= 0:
        raise ConfigError("threshold must be > 0")
    task_ids = sorted({r.task_id for r in records})
    averages = {
        tid: float(np.mean([r.sq_norm_est for r in records if r.task_id == tid]))
        for tid in task_ids
    }
    median = float(np.median(list(averages.values())))
    return {tid for tid, avg in averages.items() if avg > threshold * median}


def _corr_pair(x: np.ndarray, y: np.ndarray, min_n: int = 3) -> dict:
    n = x.shape[0]
    entry = {"n": int(n), "defined": False, "pearson": None, "spearman": None}
    if n < min_n:
        entry["reason"] = "insufficient points"
        return entry
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        entry["reason"] = "constant series"
        return entry
    entry["defined"] = True
    entry["pearson"] = float(np.corrcoef(x, y)[0, 1])
    entry["spearman"] = float(
        np.corrcoef(stats.rankdata(x), stats.rankdata(y))[0, 1]
    )
    return entry


def correlation_report(records: list[StepRecord]) -> dict:
    """Within-task and cross-task correlations against the norm estimate.

    Within-task: per-task coefficients over that task's records. Cross-task:
    coefficients over per-task mean points. Pairs with fewer than 3 points
    or zero variance are flagged as undefined rather than failing.
    """
    pairs = {
        "abs_adv_vs_norm": lambda r: r.abs_adv_mean,
        "response_len_vs_norm": lambda r: float(r.response_len),
        "padding_len_vs_norm": lambda r: float(r.padding_len),
    }
    task_ids = sorted({r.task_id for r in records})
    report = {"within_task": {}, "cross_task": {}}
    for tid in task_ids:
        rows = [r for r in records if r.task_id == tid]
        norms = np.array([r.norm_est for r in rows])
        report["within_task"][tid] = {
            name: _corr_pair(np.array([get(r) for r in rows]), norms)
            for name, get in pairs.items()
        }
    for name, get in pairs.items():
        xs, ys = [], []
        for tid in task_ids:
            rows = [r for r in records if r.task_id == tid]
            xs.append(float(np.mean([get(r) for r in rows])))
            ys.append(float(np.mean([r.norm_est for r in rows])))
        report["cross_task"][name] = _corr_pair(np.array(xs), np.array(ys), min_n=2)
    return report

"""Task-selection policies: uniform and gradient-proportional sampling.

Gradient-proportional probabilities are a temperature softmax over per-task
(unsquared) norm estimates, followed by a probability floor so no task
starves under low temperatures. The floor uses iterative clamp-and-
renormalize: entries below the floor are pinned to it, the remaining mass
is redistributed proportionally over the rest, and the procedure repeats
until stable (at most M rounds), which keeps the result a valid
distribution and makes the procedure idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gradlens import kernels
from gradlens.errors import ConfigError, ContractError

MODES = ("uniform", "grad_prop")


@dataclass(frozen=True)
class SamplerState:
    task_ids: tuple
    norms: np.ndarray
    temperature: float
    floor: float
    probs: np.ndarray
    mode: str = "grad_prop"


def uniform_probs(task_count: int) -> np.ndarray:
    if task_count < 1:
        raise ConfigError("need at least one task")
    return np.full(task_count, 1.0 / task_count)


def apply_floor(probs: np.ndarray, floor: float) -> np.ndarray:
    """Clamp below-floor entries up to the floor and renormalize the rest."""
    m = probs.shape[0]
    if floor < 0 or floor * m > 1.0 + 1e-12:
        raise ConfigError(f"floor {floor} infeasible for {m} tasks")
    if floor == 0.0:
        return probs.copy()
    out = probs.astype(np.float64).copy()
    clamped = np.zeros(m, dtype=bool)
    for _ in range(m):
        below = (~clamped) & (out < floor)
        if not below.any():
            break
        clamped |= below
        out[clamped] = floor
        free = ~clamped
        if not free.any():
            break
        target_mass = 1.0 - floor * clamped.sum()
        out[free] *= target_mass / out[free].sum()
    return out


def grad_prop_probs(norms: np.ndarray, temperature: float, floor: float) -> np.ndarray:
    """softmax(norms / temperature) with a per-task probability floor."""
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    norms = np.asarray(norms, dtype=np.float64)
    probs = np.exp(kernels.log_softmax(norms / temperature))
    return apply_floor(probs, floor)


def sample_task(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw; deterministic given the stream position."""
    probs = np.asarray(probs, dtype=np.float64)
    if abs(float(probs.sum()) - 1.0) > 1e-9 or (probs < 0).any():
        raise ContractError("probabilities must be nonnegative and sum to 1")
    cdf = np.cumsum(probs)
    return int(kernels.categorical_draws(cdf, np.array([rng.random()]))[0])


def make_state(
    task_ids,
    norms: np.ndarray,
    mode: str = "grad_prop",
    temperature: float = 0.01,
    floor: float = 0.1,
) -> SamplerState:
    task_ids = tuple(task_ids)
    if mode not in MODES:
        raise ConfigError(f"unknown sampler mode {mode!r}")
    norms = np.asarray(norms, dtype=np.float64)
    if norms.shape != (len(task_ids),):
        raise ContractError("need one norm per registered task")
    if mode == "uniform":
        probs = uniform_probs(len(task_ids))
    else:
        probs = grad_prop_probs(norms, temperature, floor)
    return SamplerState(
        task_ids=task_ids,
        norms=norms,
        temperature=temperature,
        floor=floor,
        probs=probs,
        mode=mode,
    )


def refresh(state: SamplerState, new_norms: np.ndarray) -> SamplerState:
    """Recompute probabilities from fresh norm estimates."""
    new_norms = np.asarray(new_norms, dtype=np.float64)
    if new_norms.shape != (len(state.task_ids),):
        raise ContractError("need one norm per registered task")
    if state.mode == "uniform":
        probs = uniform_probs(len(state.task_ids))
    else:
        probs = grad_prop_probs(new_norms, state.temperature, state.floor)
    return replace(state, norms=new_norms, probs=probs)

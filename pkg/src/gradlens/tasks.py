"""Synthetic task families with verifiable tiered rewards.

Each family emits contexts from its own seeded distribution, scaled by the
task's feature_scale, with a correct action that can be re-derived from the
emitted context (the labeling rules are all scale-invariant). Cross-task
gradient imbalance is induced through feature_scale and difficulty rather
than hand-tuned gradients. Rewards use the three-tier rule: 1.0 for the
correct action, 0.1 for a well-formed wrong action, 0.0 for the instance's
designated malformed action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradlens.errors import ConfigError, ContractError
from gradlens.rngstreams import substream

FAMILIES = ("scaled_bandit", "parity", "modular_add", "noisy_channel")

REWARD_CORRECT = 1.0
REWARD_WRONG = 0.1
REWARD_MALFORMED = 0.0


@dataclass(frozen=True)
class TaskSpec:
    id: str
    family: str
    context_dim: int
    action_count: int
    feature_scale: float = 1.0
    difficulty: float = 0.0
    seed: int = 0
    # Length emulation: episode_len is the number of actions per rollout
    # (only the last one is scored); padding_mean drives a per-instance
    # padding counter logged as telemetry, standing in for prompt length.
    episode_len: int = 1
    padding_mean: float = 0.0

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown task family {self.family!r}")
        if self.context_dim < 1 or self.action_count < 2:
            raise ConfigError(f"task {self.id}: bad dimensions")
        if self.feature_scale <= 0:
            raise ConfigError(f"task {self.id}: feature_scale must be > 0")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError(f"task {self.id}: difficulty must be in [0, 1]")
        if self.episode_len < 1:
            raise ConfigError(f"task {self.id}: episode_len must be >= 1")
        if self.padding_mean < 0:
            raise ConfigError(f"task {self.id}: padding_mean must be >= 0")


@dataclass
class Instance:
    context: np.ndarray
    correct_action: int
    format_trap: bool
    padding_len: int = 0


def _hidden_weights(task: TaskSpec) -> np.ndarray:
    # Fixed per-task labeling matrix; independent of the instance stream.
    rng = substream(task.seed, "task_data", task.id, "hidden")
    return rng.standard_normal((task.action_count, task.context_dim))


def derive_correct_action(task: TaskSpec, context: np.ndarray) -> int:
    """Re-derive the noiseless label from an emitted context.

    All rules are invariant to the positive feature_scale multiplier, so
    they apply to the scaled context directly.
    """
    k = task.action_count
    if task.family == "scaled_bandit":
        return int(np.argmax(_hidden_weights(task) @ context))
    if task.family == "parity":
        return int(np.sum(context < 0) % k)
    if task.family == "modular_add":
        return int(round(float(np.sum(context)) / task.feature_scale)) % k
    if task.family == "noisy_channel":
        return int(np.argmax(context)) % k
    raise ConfigError(f"unknown task family {task.family!r}")


def _raw_context(task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    d = task.context_dim
    if task.family == "scaled_bandit":
        return rng.standard_normal(d)
    if task.family == "parity":
        signs = rng.integers(0, 2, size=d) * 2 - 1
        return signs * rng.uniform(0.5, 1.5, size=d)
    if task.family == "modular_add":
        return rng.integers(0, 10, size=d).astype(np.float64)
    # noisy_channel: a one-hot signal buried in Gaussian noise whose level
    # grows with difficulty (context ambiguity instead of label noise).
    target = int(rng.integers(0, task.action_count))
    base = np.zeros(d)
    base[target % d] = 1.0
    sigma = 0.15 + 0.6 * task.difficulty
    return base + sigma * rng.standard_normal(d)


def sample_instance(task: TaskSpec, rng: np.random.Generator) -> Instance:
    """Draw one instance; deterministic given the stream position."""
    context = task.feature_scale * _raw_context(task, rng)
    correct = derive_correct_action(task, context)
    # Label noise for the families whose rule is exact: with probability
    # difficulty the label is redrawn uniformly. noisy_channel expresses
    # difficulty through context ambiguity instead, keeping its label a
    # deterministic function of the context.
    if task.family != "noisy_channel" and task.difficulty > 0.0:
        if rng.random() < task.difficulty:
            correct = int(rng.integers(0, task.action_count))
    padding = int(rng.poisson(task.padding_mean)) if task.padding_mean > 0 else 0
    return Instance(
        context=context,
        correct_action=correct,
        format_trap=True,
        padding_len=padding,
    )


def malformed_action(instance: Instance, action_count: int) -> int | None:
    """The designated wrong-format action for this instance, if any."""
    if not instance.format_trap:
        return None
    return (instance.correct_action + 1) % action_count


def score(task: TaskSpec, instance: Instance, action: int) -> float:
    """Tiered reward: 1.0 correct, 0.1 well-formed wrong, 0.0 malformed."""
    if not 0 <= action < task.action_count:
        raise ContractError(f"action {action} out of range for task {task.id}")
    if action == instance.correct_action:
        return REWARD_CORRECT
    if action == malformed_action(instance, task.action_count):
        return REWARD_MALFORMED
    return REWARD_WRONG


# ---------------------------------------------------------------------------
# Registry and presets.
# ---------------------------------------------------------------------------


def multi_domain_analog(seed: int = 0) -> list[TaskSpec]:
    """Four heterogeneous families sharing one policy head."""
    d, k = 6, 4
    return [
        TaskSpec("bandit_hi_scale", "scaled_bandit", d, k, feature_scale=3.0,
                 difficulty=0.3, seed=seed, episode_len=4, padding_mean=55.0),
        TaskSpec("parity_mid", "parity", d, k, feature_scale=1.0,
                 difficulty=0.5, seed=seed, episode_len=2, padding_mean=16.0),
        TaskSpec("modadd_low", "modular_add", d, k, feature_scale=0.5,
                 difficulty=0.4, seed=seed, episode_len=1, padding_mean=17.0),
        TaskSpec("channel_noisy", "noisy_channel", d, k, feature_scale=1.0,
                 difficulty=0.6, seed=seed, episode_len=3, padding_mean=116.0),
    ]


def single_domain_analog(seed: int = 0) -> list[TaskSpec]:
    """Three instances of one family: hard, medium, and easy-but-high-scale.

    The easy task carries a 4x feature scale, so its gradients dominate by
    construction while its labels are the cleanest.
    """
    d, k = 6, 4
    return [
        TaskSpec("mod_hard", "modular_add", d, k, feature_scale=1.0,
                 difficulty=0.7, seed=seed, episode_len=2, padding_mean=17.0),
        TaskSpec("mod_mid", "modular_add", d, k, feature_scale=1.0,
                 difficulty=0.45, seed=seed, episode_len=2, padding_mean=17.0),
        TaskSpec("mod_easy_scaled", "modular_add", d, k, feature_scale=4.0,
                 difficulty=0.1, seed=seed, episode_len=1, padding_mean=10.0),
    ]


PRESETS = {
    "multi_domain_analog": multi_domain_analog,
    "single_domain_analog": single_domain_analog,
}


def task_registry(config, seed: int = 0) -> list[TaskSpec]:
    """Validate and return the task list named by ``config``.

    ``config`` is either a preset name or an iterable of TaskSpec / field
    mappings. All tasks must share context_dim and action_count, and ids
    must be unique.
    """
    if isinstance(config, str):
        if config not in PRESETS:
            raise ConfigError(f"unknown task preset {config!r}")
        tasks = PRESETS[config](seed=seed)
    else:
        tasks = []
        for entry in config:
            if isinstance(entry, TaskSpec):
                tasks.append(entry)
            else:
                tasks.append(TaskSpec(**dict(entry)))
    if not tasks:
        raise ConfigError("task list is empty")
    seen = set()
    for task in tasks:
        task.validate()
        if task.id in seen:
            raise ConfigError(f"duplicate task id {task.id!r}")
        seen.add(task.id)
    dims = {(t.context_dim, t.action_count) for t in tasks}
    if len(dims) != 1:
        raise ConfigError("all tasks must share context_dim and action_count")
    return tasks

"""Group rollouts, group-relative advantages, and clipped SGD updates.

The training objective per group (ascent convention) is

    (1/G) sum_i A_i * (1/L) sum_j log pi(a_ij | s)
    + entropy_coeff * H(pi(.|s)) - kl_coeff * KL(pi(.|s) || pi_ref(.|s))

and the batch gradient is the mean of per-group gradients, so it is linear
in the groups by construction. Training is fully on-policy with one update
per batch: the importance ratio is identically 1 and clip_ratio never binds
(kept in the config for fidelity). Entropy and KL gradients are exact
closed forms of the categorical distributions at each visited context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gradlens import kernels
from gradlens.errors import ConfigError, ContractError, NumericError, ShapeError
from gradlens.policy import ParamVector, Policy
from gradlens.tasks import Instance, TaskSpec, sample_instance, score

ADV_EPS = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 128
    group_size: int = 16
    learning_rate: float = 5e-7
    kl_coeff: float = 1e-3
    entropy_coeff: float = 1e-3
    grad_clip: float = 1.0
    clip_ratio: float = 0.2
    total_steps: int = 100

    def validate(self) -> None:
        if min(self.batch_size, self.group_size, self.total_steps) < 1:
            raise ConfigError("batch_size, group_size, total_steps must be >= 1")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2 for group statistics")
        if self.batch_size % self.group_size != 0:
            raise ConfigError("batch_size must be divisible by group_size")
        if self.learning_rate <= 0 or self.grad_clip <= 0 or self.clip_ratio <= 0:
            raise ConfigError("learning_rate, grad_clip, clip_ratio must be > 0")
        if self.kl_coeff < 0 or self.entropy_coeff < 0:
            raise ConfigError("kl_coeff and entropy_coeff must be >= 0")

    @property
    def groups_per_batch(self) -> int:
        return self.batch_size // self.group_size


@dataclass
class RolloutGroup:
    task_id: str
    instance: Instance
    actions: np.ndarray  # (G, L) action indices
    rewards: np.ndarray  # (G,) final-action rewards
    log_probs: np.ndarray  # (G,) per-action mean log-prob of each rollout
    advantages: np.ndarray = field(default=None)
    advantages_filled: bool = False

    def __post_init__(self):
        if self.advantages is None:
            self.advantages = np.zeros_like(self.rewards)

    @property
    def group_size(self) -> int:
        return self.rewards.shape[0]


def rollout_group(
    policy: Policy,
    params: ParamVector,
    task: TaskSpec,
    group_size: int,
    rng: np.random.Generator,
    instance: Instance | None = None,
) -> RolloutGroup:
    """Sample one instance and G i.i.d. rollouts from the current policy.

    The harness passes ``instance`` explicitly to keep task data streams
    independent of scheduling; standalone callers can let the group draw
    its own instance from ``rng``. Advantages stay zero until
    ``fill_advantages`` runs.
    """
    if group_size < 2:
        raise ContractError("group_size must be >= 2 (group statistics undefined)")
    if instance is None:
        instance = sample_instance(task, rng)
    probs, log_probs_vec = policy.distribution(params, instance.context)
    cdf = np.cumsum(probs)
    length = task.episode_len
    uniforms = rng.random(group_size * length)
    actions = kernels.categorical_draws(cdf, uniforms).reshape(group_size, length)
    rewards = np.array(
        [score(task, instance, int(actions[i, -1])) for i in range(group_size)]
    )
    log_probs = log_probs_vec[actions].mean(axis=1)
    return RolloutGroup(
        task_id=task.id,
        instance=instance,
        actions=actions,
        rewards=rewards,
        log_probs=log_probs,
    )


def group_advantages(rewards: np.ndarray) -> np.ndarray:
    """Group-mean-centered rewards over (population std + 1e-8).

    An all-equal group returns exact zeros rather than 0/eps noise.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape[0] < 2:
        raise ContractError("need at least 2 rewards for group advantages")
    return kernels.normalize_advantages(rewards, ADV_EPS)


def fill_advantages(group: RolloutGroup) -> RolloutGroup:
    group.advantages = group_advantages(group.rewards)
    group.advantages_filled = True
    return group


def _group_dlogits(group: RolloutGroup, log_probs_vec: np.ndarray) -> np.ndarray:
    """Logit-space gradient of the group's advantage-weighted log-prob term."""
    g, length = group.actions.shape
    probs = np.exp(log_probs_vec)
    coeffs = np.repeat(group.advantages / (g * length), length)
    flat_actions = group.actions.ravel().astype(np.int64)
    return kernels.weighted_dlogits(probs, flat_actions, coeffs)


def group_policy_gradient(
    policy: Policy, params: ParamVector, group: RolloutGroup
) -> ParamVector:
    """Advantage-weighted score-function gradient of one group.

    Excludes the entropy and KL terms; this is the quantity whose per-task
    magnitude the norm probe tracks.
    """
    if not group.advantages_filled:
        raise ContractError("advantages not filled; run fill_advantages first")
    context = group.instance.context
    logits, hidden = policy.forward(params, context)
    log_probs_vec = kernels.log_softmax(logits)
    dlogits = _group_dlogits(group, log_probs_vec)
    return policy.grad_from_dlogits(params, context, dlogits, hidden)


def group_gradient(
    policy: Policy,
    params: ParamVector,
    group: RolloutGroup,
    ref_params: ParamVector,
    config: TrainConfig,
) -> ParamVector:
    """Full per-group training gradient including entropy and KL terms."""
    if not group.advantages_filled:
        raise ContractError("advantages not filled; run fill_advantages first")
    context = group.instance.context
    logits, hidden = policy.forward(params, context)
    log_probs_vec = kernels.log_softmax(logits)
    probs = np.exp(log_probs_vec)
    dlogits = _group_dlogits(group, log_probs_vec)
    if config.entropy_coeff != 0.0:
        dlogits = dlogits + config.entropy_coeff * kernels.entropy_dlogits(
            probs, log_probs_vec
        )
    if config.kl_coeff != 0.0:
        ref_logits, _ = policy.forward(ref_params, context)
        ref_log_probs = kernels.log_softmax(ref_logits)
        dlogits = dlogits - config.kl_coeff * kernels.kl_dlogits(
            probs, log_probs_vec, ref_log_probs
        )
    return policy.grad_from_dlogits(params, context, dlogits, hidden)


def batch_gradient(
    policy: Policy,
    params: ParamVector,
    groups: list[RolloutGroup],
    ref_params: ParamVector,
    config: TrainConfig,
) -> ParamVector:
    """Mean over groups of the per-group gradients (ascent direction)."""
    if not groups:
        raise ContractError("batch_gradient needs at least one group")
    acc = np.zeros(policy.param_count)
    for group in groups:
        acc += group_gradient(policy, params, group, ref_params, config).values
    acc /= len(groups)
    return ParamVector(acc, policy.segments)


def surrogate_objective(
    policy: Policy,
    params: ParamVector,
    groups: list[RolloutGroup],
    ref_params: ParamVector,
    config: TrainConfig,
) -> float:
    """Scalar whose exact gradient batch_gradient computes; oracle for tests."""
    total = 0.0
    for group in groups:
        if not group.advantages_filled:
            raise ContractError("advantages not filled")
        context = group.instance.context
        _, log_probs_vec = policy.distribution(params, context)
        probs = np.exp(log_probs_vec)
        g, length = group.actions.shape
        pg = 0.0
        for i in range(g):
            pg += group.advantages[i] * np.mean(log_probs_vec[group.actions[i]])
        pg /= g
        entropy = -float(np.sum(probs * log_probs_vec))
        _, ref_log_probs = policy.distribution(ref_params, context)
        kl = float(np.sum(probs * (log_probs_vec - ref_log_probs)))
        total += pg + config.entropy_coeff * entropy - config.kl_coeff * kl
    return total / len(groups)


def mixture_gradient(per_task_grads: list[ParamVector]) -> ParamVector:
    """Elementwise mean of per-task gradients (the uniform mixture)."""
    if not per_task_grads:
        raise ContractError("mixture_gradient needs at least one gradient")
    length = len(per_task_grads[0])
    for grad in per_task_grads[1:]:
        if len(grad) != length:
            raise ShapeError("gradient length mismatch in mixture")
    values = np.mean([g.values for g in per_task_grads], axis=0)
    return per_task_grads[0].with_values(values)


def sgd_step(params: ParamVector, grad: ParamVector, config: TrainConfig) -> ParamVector:
    """Clip the gradient to grad_clip by norm, then ascend by learning_rate."""
    values = grad.values
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite gradient; step aborted")
    norm = np.linalg.norm(values)
    if norm > config.grad_clip:
        values = values * (config.grad_clip / norm)
    return params.with_values(params.values + config.learning_rate * values)

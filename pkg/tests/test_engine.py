"""Engine: advantages, surrogate gradients vs finite differences, SGD."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradlens.engine import (
    TrainConfig,
    batch_gradient,
    fill_advantages,
    group_advantages,
    mixture_gradient,
    rollout_group,
    sgd_step,
    surrogate_objective,
)
from gradlens.errors import ConfigError, ContractError, NumericError, ShapeError
from gradlens.policy import ParamVector, Policy, PolicySpec
from gradlens.rngstreams import substream
from gradlens.tasks import TaskSpec


def make_policy(arch="linear_softmax", hidden=5):
    return Policy(PolicySpec(arch, 3, 4, hidden_dim=hidden, init_seed=2))


def make_task(**kw):
    base = dict(id="t0", family="scaled_bandit", context_dim=3, action_count=4, seed=1)
    base.update(kw)
    return TaskSpec(**base)


class TestGroupAdvantages:
    def test_hand_computed_fixture(self):
        adv = group_advantages(np.array([1.0, 0.1, 0.1, 0.1]))
        # mean 0.325, population std sqrt(0.151875)
        std = math.sqrt(0.151875)
        np.testing.assert_allclose(
            adv, [0.675 / (std + 1e-8)] + [-0.225 / (std + 1e-8)] * 3, rtol=1e-12
        )
        np.testing.assert_allclose(adv, [1.7321, -0.5774, -0.5774, -0.5774], atol=2e-4)

    def test_two_point_group(self):
        np.testing.assert_allclose(group_advantages(np.array([1.0, 0.0])), [1, -1], atol=1e-7)

    def test_all_equal_gives_exact_zeros(self):
        adv = group_advantages(np.array([0.1] * 8))
        assert (adv == 0.0).all()

    def test_too_small(self):
        with pytest.raises(ContractError):
            group_advantages(np.array([1.0]))

    @given(
        st.lists(st.sampled_from([0.0, 0.1, 1.0]), min_size=2, max_size=32),
    )
    @settings(max_examples=200, deadline=None)
    def test_mean_is_zero(self, rewards):
        adv = group_advantages(np.array(rewards))
        assert abs(float(np.mean(adv))) <= 1e-10


class TestRollouts:
    def test_fixed_seed_identical(self):
        policy = make_policy()
        params = policy.init_params()
        task = make_task()
        a = rollout_group(policy, params, task, 8, substream(3, "rollout", 0, 0))
        b = rollout_group(policy, params, task, 8, substream(3, "rollout", 0, 0))
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.log_probs, b.log_probs)

    def test_deterministic_policy_constant_actions(self):
        policy = Policy(PolicySpec("linear_softmax", 1, 2))
        params = ParamVector(np.array([1000.0, 0.0]), policy.segments)
        task = make_task(context_dim=1, action_count=2, family="noisy_channel")
        group = rollout_group(policy, params, task, 6, substream(0, "rollout", 0, 0))
        assert (group.actions == 0).all()

    def test_group_of_one_rejected(self):
        policy = make_policy()
        with pytest.raises(ContractError):
            rollout_group(
                policy, policy.init_params(), make_task(), 1, substream(0, "rollout", 0, 0)
            )

    def test_episode_len_shapes(self):
        policy = make_policy()
        task = make_task(episode_len=3)
        group = rollout_group(
            policy, policy.init_params(), task, 5, substream(1, "rollout", 0, 0)
        )
        assert group.actions.shape == (5, 3)
        assert group.rewards.shape == (5,)


def _sampled_groups(policy, params, task, n_groups, group_size=4, seed=0):
    groups = []
    for g in range(n_groups):
        group = rollout_group(
            policy, params, task, group_size, substream(seed, "rollout", 0, g)
        )
        groups.append(fill_advantages(group))
    return groups


class TestBatchGradient:
    def test_zero_advantages_zero_coeffs_zero_gradient(self):
        policy = make_policy()
        params = policy.init_params()
        config = TrainConfig(batch_size=8, group_size=4, kl_coeff=0.0, entropy_coeff=0.0)
        groups = _sampled_groups(policy, params, make_task(), 2)
        for g in groups:
            g.advantages[:] = 0.0
        grad = batch_gradient(policy, params, groups, params, config)
        assert (grad.values == 0.0).all()

    def test_kl_gradient_vanishes_at_reference(self):
        policy = make_policy("mlp1")
        params = policy.init_params()
        config = TrainConfig(batch_size=8, group_size=4, kl_coeff=1.0, entropy_coeff=0.0)
        groups = _sampled_groups(policy, params, make_task(), 2)
        for g in groups:
            g.advantages[:] = 0.0
        grad = batch_gradient(policy, params, groups, params, config)
        assert np.max(np.abs(grad.values)) < 1e-8

    def test_unfilled_advantages_rejected(self):
        policy = make_policy()
        params = policy.init_params()
        group = rollout_group(policy, params, make_task(), 4, substream(0, "rollout", 0, 0))
        with pytest.raises(ContractError):
            batch_gradient(policy, params, [group], params, TrainConfig())

    @pytest.mark.parametrize("arch", ["linear_softmax", "mlp1"])
    def test_matches_finite_differences_of_surrogate(self, arch):
        policy = make_policy(arch)
        rng = np.random.default_rng(17)
        params = ParamVector(rng.uniform(-0.5, 0.5, policy.param_count), policy.segments)
        ref = ParamVector(rng.uniform(-0.5, 0.5, policy.param_count), policy.segments)
        config = TrainConfig(batch_size=8, group_size=4, kl_coeff=1e-3, entropy_coeff=1e-3)
        groups = _sampled_groups(policy, params, make_task(episode_len=2), 3)
        grad = batch_gradient(policy, params, groups, ref, config)
        step = 1e-6
        fd = np.empty(policy.param_count)
        for i in range(policy.param_count):
            up = params.values.copy()
            up[i] += step
            down = params.values.copy()
            down[i] -= step
            fd[i] = (
                surrogate_objective(policy, params.with_values(up), groups, ref, config)
                - surrogate_objective(policy, params.with_values(down), groups, ref, config)
            ) / (2 * step)
        err = np.linalg.norm(grad.values - fd) / max(np.linalg.norm(fd), 1e-12)
        assert err < 1e-5

    def test_equals_mean_of_per_group_gradients(self):
        policy = make_policy()
        params = policy.init_params()
        config = TrainConfig(batch_size=16, group_size=4)
        groups = _sampled_groups(policy, params, make_task(), 4)
        whole = batch_gradient(policy, params, groups, params, config)
        parts = [
            batch_gradient(policy, params, [g], params, config).values for g in groups
        ]
        np.testing.assert_allclose(whole.values, np.mean(parts, axis=0), atol=1e-12)


class TestMixture:
    def test_idempotent_on_copies(self):
        policy = make_policy()
        g = ParamVector(np.arange(policy.param_count, dtype=float), policy.segments)
        np.testing.assert_array_equal(mixture_gradient([g, g.copy()]).values, g.values)

    def test_cancellation(self):
        policy = make_policy()
        g = ParamVector(np.arange(policy.param_count, dtype=float), policy.segments)
        neg = g.with_values(-g.values)
        assert (mixture_gradient([g, neg]).values == 0.0).all()

    def test_dominant_task_controls_mixture(self):
        rng = np.random.default_rng(4)
        policy = make_policy()
        dominant = rng.standard_normal(policy.param_count)
        dominant *= 100.0 / np.linalg.norm(dominant)
        small = [rng.standard_normal(policy.param_count) for _ in range(3)]
        small = [s / np.linalg.norm(s) for s in small]
        grads = [ParamVector(dominant, policy.segments)] + [
            ParamVector(s, policy.segments) for s in small
        ]
        mix = mixture_gradient(grads)
        rel = np.linalg.norm(mix.values - dominant / 4) / np.linalg.norm(dominant / 4)
        assert rel < 0.03

    def test_length_mismatch(self):
        a = ParamVector(np.zeros(4), (("w", 0, 4),))
        b = ParamVector(np.zeros(6), (("w", 0, 6),))
        with pytest.raises(ShapeError):
            mixture_gradient([a, b])


class TestSgdStep:
    def setup_method(self):
        self.policy = Policy(PolicySpec("linear_softmax", 2, 2))
        self.config = TrainConfig(
            batch_size=4, group_size=2, learning_rate=5e-7, grad_clip=1.0
        )

    def _step_norm(self, grad_values):
        params = self.policy.init_params()
        grad = ParamVector(grad_values, self.policy.segments)
        updated = sgd_step(params, grad, self.config)
        return np.linalg.norm(updated.values - params.values)

    def test_below_clip_exact_linearity(self):
        g = np.array([0.3, 0.4, 0.0, 0.0])  # norm 0.5
        assert self._step_norm(g) == pytest.approx(2.5e-7, rel=1e-12)

    def test_clip_saturation(self):
        g = np.array([6.0, 8.0, 0.0, 0.0])  # norm 10
        assert self._step_norm(g) == pytest.approx(5e-7, rel=1e-12)

    def test_sqrt33_effective_lr_ratio(self):
        g = np.array([0.06, 0.08, 0.0, 0.0])  # norm 0.1, well below clip
        c = math.sqrt(33.0)
        ratio = self._step_norm(c * g) / self._step_norm(g)
        assert abs(ratio - c) < 1e-9

    def test_post_clip_norm_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            g = rng.standard_normal(4) * rng.uniform(0.01, 50)
            params = self.policy.init_params()
            updated = sgd_step(params, ParamVector(g, self.policy.segments), self.config)
            norm = np.linalg.norm(updated.values - params.values)
            assert norm <= self.config.learning_rate * (self.config.grad_clip + 1e-12)

    def test_scaling_linearity_below_clip(self):
        g = np.array([0.1, -0.05, 0.02, 0.0])
        c = 3.5
        assert self._step_norm(c * g) == pytest.approx(c * self._step_norm(g), rel=1e-12)

    def test_nan_gradient_aborts(self):
        params = self.policy.init_params()
        grad = ParamVector(np.zeros(4), self.policy.segments)
        grad.values[0] = np.nan  # bypasses construction-time validation
        with pytest.raises(NumericError):
            sgd_step(params, grad, self.config)


class TestTrainConfig:
    def test_defaults_are_valid(self):
        TrainConfig().validate()

    def test_batch_divisibility(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=10, group_size=4).validate()

    def test_group_size_minimum(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=4, group_size=1).validate()

"""Task families: scaling, label derivation, tiered rewards, presets."""

import numpy as np
import pytest

from gradlens.errors import ConfigError, ContractError
from gradlens.policy import Policy, PolicySpec
from gradlens.rngstreams import substream
from gradlens.tasks import (
    FAMILIES,
    Instance,
    TaskSpec,
    derive_correct_action,
    malformed_action,
    multi_domain_analog,
    sample_instance,
    score,
    single_domain_analog,
    task_registry,
)


def make_task(family="scaled_bandit", **kw):
    base = dict(
        id=f"{family}_t", family=family, context_dim=5, action_count=4,
        feature_scale=1.0, difficulty=0.0, seed=3,
    )
    base.update(kw)
    return TaskSpec(**base)


class TestSampling:
    def test_feature_scale_exact_factor(self):
        for family in FAMILIES:
            t1 = make_task(family, feature_scale=1.0)
            t4 = make_task(family, feature_scale=4.0)
            a = sample_instance(t1, substream(7, "task_data", t1.id, 0))
            b = sample_instance(t4, substream(7, "task_data", t4.id, 0))
            np.testing.assert_array_equal(b.context, 4.0 * a.context)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_zero_difficulty_label_rederivable(self, family):
        task = make_task(family, difficulty=0.0)
        for i in range(50):
            inst = sample_instance(task, substream(11, "task_data", task.id, i))
            assert inst.correct_action == derive_correct_action(task, inst.context)
            assert 0 <= inst.correct_action < task.action_count

    def test_noisy_channel_label_rederivable_at_any_difficulty(self):
        task = make_task("noisy_channel", difficulty=0.8)
        for i in range(30):
            inst = sample_instance(task, substream(2, "task_data", task.id, i))
            assert inst.correct_action == derive_correct_action(task, inst.context)

    def test_same_stream_position_identical(self):
        task = make_task("parity", difficulty=0.5)
        a = sample_instance(task, substream(5, "task_data", task.id, 42))
        b = sample_instance(task, substream(5, "task_data", task.id, 42))
        np.testing.assert_array_equal(a.context, b.context)
        assert a.correct_action == b.correct_action
        assert a.padding_len == b.padding_len

    def test_padding_follows_mean(self):
        task = make_task("modular_add", padding_mean=20.0)
        pads = [
            sample_instance(task, substream(1, "task_data", task.id, i)).padding_len
            for i in range(300)
        ]
        assert abs(np.mean(pads) - 20.0) < 3 * np.sqrt(20.0 / 300)

    def test_label_noise_rate_tracks_difficulty(self):
        task = make_task("parity", difficulty=0.6)
        flips = 0
        n = 600
        for i in range(n):
            inst = sample_instance(task, substream(9, "task_data", task.id, i))
            if inst.correct_action != derive_correct_action(task, inst.context):
                flips += 1
        # redraw hits the true label 1/K of the time, so flip rate is d*(K-1)/K
        expected = 0.6 * 3 / 4
        assert abs(flips / n - expected) < 3 * np.sqrt(expected * (1 - expected) / n)


class TestScore:
    def test_three_tiers(self):
        task = make_task(action_count=4)
        inst = Instance(np.zeros(5), correct_action=2, format_trap=True)
        assert score(task, inst, 2) == 1.0
        assert score(task, inst, 3) == 0.0  # designated malformed action
        assert score(task, inst, 0) == 0.1
        assert score(task, inst, 1) == 0.1

    def test_no_trap_instance_has_no_zero_tier(self):
        task = make_task(action_count=4)
        inst = Instance(np.zeros(5), correct_action=2, format_trap=False)
        assert malformed_action(inst, 4) is None
        rewards = {score(task, inst, a) for a in range(4)}
        assert rewards == {1.0, 0.1}

    def test_out_of_range_action(self):
        task = make_task()
        inst = Instance(np.zeros(5), 0, True)
        with pytest.raises(ContractError):
            score(task, inst, 4)

    def test_reward_set_is_exactly_three_tiers(self):
        rng = np.random.default_rng(0)
        seen = set()
        for family in FAMILIES:
            task = make_task(family, difficulty=0.3)
            for i in range(50):
                inst = sample_instance(task, substream(3, "task_data", task.id, i))
                seen.add(score(task, inst, int(rng.integers(0, 4))))
        assert seen == {0.0, 0.1, 1.0}

    def test_uniform_policy_expected_reward(self):
        # difficulty 0, K actions, one malformed: (1 + 0.1*(K-2)) / K
        task = make_task("scaled_bandit", action_count=4, difficulty=0.0)
        rng = np.random.default_rng(123)
        n = 20_000
        total = 0.0
        for i in range(400):
            inst = sample_instance(task, substream(8, "task_data", task.id, i))
            actions = rng.integers(0, 4, n // 400)
            total += sum(score(task, inst, int(a)) for a in actions)
        mean = total / n
        expected = (1.0 + 0.1 * 2) / 4
        se = np.sqrt(0.165 / n)
        assert abs(mean - expected) < 3 * se


def test_grad_norm_scales_linearly_with_feature_scale():
    # at zero params the policy ignores the context, so the score-function
    # gradient norm is proportional to the emitted context's scale
    policy = Policy(PolicySpec("linear_softmax", 5, 4))
    params = policy.init_params()
    t1 = make_task("scaled_bandit", feature_scale=1.0)
    t4 = make_task("scaled_bandit", feature_scale=4.0)
    for i in range(10):
        a = sample_instance(t1, substream(21, "task_data", t1.id, i))
        b = sample_instance(t4, substream(21, "task_data", t4.id, i))
        ga = policy.grad_log_prob(params, a.context, 1).norm()
        gb = policy.grad_log_prob(params, b.context, 1).norm()
        assert gb == pytest.approx(4.0 * ga, rel=1e-12)


class TestRegistry:
    def test_single_domain_preset(self):
        tasks = task_registry("single_domain_analog")
        assert len(tasks) == 3
        assert len({t.family for t in tasks}) == 1
        assert len({(t.difficulty, t.feature_scale) for t in tasks}) == 3

    def test_multi_domain_preset(self):
        tasks = task_registry("multi_domain_analog")
        assert len(tasks) == 4
        assert len({t.family for t in tasks}) == 4

    def test_presets_share_policy_head_dims(self):
        for maker in (single_domain_analog, multi_domain_analog):
            tasks = maker()
            assert len({(t.context_dim, t.action_count) for t in tasks}) == 1

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ConfigError):
            task_registry([make_task(), make_task()])

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            task_registry([])

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            task_registry("no_such_preset")

    def test_mismatched_dims_rejected(self):
        with pytest.raises(ConfigError):
            task_registry([make_task(), make_task(family="parity", context_dim=7)])

    def test_invalid_fields_rejected(self):
        with pytest.raises(ConfigError):
            task_registry([make_task(feature_scale=0.0)])
        with pytest.raises(ConfigError):
            task_registry([make_task(difficulty=1.5)])

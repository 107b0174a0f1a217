"""Policies: closed-form gradients against the finite-difference oracle."""

import numpy as np
import pytest

from gradlens.errors import ConfigError, ContractError, ShapeError
from gradlens.policy import ParamVector, Policy, PolicySpec


def linear(context_dim=2, action_count=2, seed=0):
    return Policy(PolicySpec("linear_softmax", context_dim, action_count, init_seed=seed))


def mlp(context_dim=3, action_count=4, hidden_dim=5, seed=0):
    return Policy(
        PolicySpec("mlp1", context_dim, action_count, hidden_dim=hidden_dim, init_seed=seed)
    )


class TestInit:
    def test_linear_zero_init(self):
        params = linear(2, 2).init_params()
        assert len(params) == 4
        assert np.all(params.values == 0.0)

    def test_same_seed_identical(self):
        a = mlp(seed=9).init_params()
        b = mlp(seed=9).init_params()
        np.testing.assert_array_equal(a.values, b.values)

    def test_different_seed_differs(self):
        a = mlp(seed=1).init_params()
        b = mlp(seed=2).init_params()
        assert not np.array_equal(a.values, b.values)

    def test_mlp_zero_hidden_rejected(self):
        with pytest.raises(ConfigError):
            Policy(PolicySpec("mlp1", 3, 4, hidden_dim=0))

    def test_bad_arch_rejected(self):
        with pytest.raises(ConfigError):
            Policy(PolicySpec("transformer", 3, 4))

    def test_param_count_matches_segments(self):
        p = mlp(3, 4, 5)
        assert p.param_count == 5 * 3 + 5 + 4 * 5 + 4
        assert p.init_params().segments[-1].name == "output"


class TestParamVector:
    def test_segments_must_partition(self):
        with pytest.raises(ShapeError):
            ParamVector(np.zeros(4), (("a", 0, 2), ("b", 3, 1)))

    def test_nonfinite_rejected(self):
        from gradlens.errors import NumericError

        with pytest.raises(NumericError):
            ParamVector(np.array([1.0, np.nan]), (("a", 0, 2),))


class TestDistribution:
    def test_zero_params_uniform(self):
        p = linear(2, 2)
        probs = p.action_distribution(p.init_params(), [0.3, -1.2])
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-15)

    def test_extreme_logits_stable(self):
        p = linear(1, 2)
        params = ParamVector(np.array([1000.0, 0.0]), p.segments)
        probs = p.action_distribution(params, [1.0])
        assert np.isfinite(probs).all()
        assert probs[0] == pytest.approx(1.0)

    def test_log2_logits(self):
        p = linear(1, 2)
        params = ParamVector(np.array([np.log(2.0), 0.0]), p.segments)
        probs = p.action_distribution(params, [1.0])
        np.testing.assert_allclose(probs, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        p = mlp()
        params = p.init_params()
        for _ in range(20):
            probs = p.action_distribution(params, rng.standard_normal(3))
            assert abs(probs.sum() - 1.0) < 1e-12
            assert (probs > 0).all()

    def test_dimension_mismatch(self):
        p = linear(2, 2)
        with pytest.raises(ShapeError):
            p.action_distribution(p.init_params(), [1.0, 2.0, 3.0])


class TestGradLogProb:
    def test_one_hot_zero_params_closed_form(self):
        p = linear(1, 2)
        grad = p.grad_log_prob(p.init_params(), [1.0], 0)
        np.testing.assert_allclose(grad.values, [0.5, -0.5], atol=1e-12)

    def test_antisymmetric_at_symmetric_point(self):
        p = linear(1, 2)
        grad = p.grad_log_prob(p.init_params(), [1.0], 1)
        assert grad.values[0] == pytest.approx(-grad.values[1])

    def test_near_deterministic_limit_flat(self):
        p = linear(1, 2)
        params = ParamVector(np.array([1000.0, 0.0]), p.segments)
        grad = p.grad_log_prob(params, [1.0], 0)
        assert np.max(np.abs(grad.values)) < 1e-200

    def test_action_out_of_range(self):
        p = linear(2, 2)
        with pytest.raises(ContractError):
            p.grad_log_prob(p.init_params(), [1.0, 0.0], 2)

    def test_expected_score_is_zero(self):
        rng = np.random.default_rng(5)
        for policy in (linear(3, 4), mlp(3, 4, 6)):
            params = ParamVector(
                rng.uniform(-1, 1, policy.param_count), policy.segments
            )
            context = rng.standard_normal(3)
            probs = policy.action_distribution(params, context)
            total = sum(
                probs[a] * policy.grad_log_prob(params, context, a).values
                for a in range(4)
            )
            assert np.max(np.abs(total)) < 1e-10

    def test_shift_invariance_of_distribution(self):
        # adding a constant to every logit leaves the distribution unchanged
        rng = np.random.default_rng(6)
        p = linear(3, 4)
        params = ParamVector(rng.uniform(-1, 1, p.param_count), p.segments)
        context = rng.standard_normal(3)
        base = p.action_distribution(params, context)
        bump = 2.5 * context / (context @ context)
        shifted_values = (params.values.reshape(4, 3) + bump).ravel()
        shifted = p.action_distribution(params.with_values(shifted_values), context)
        np.testing.assert_allclose(base, shifted, atol=1e-12)


class TestFiniteDifferenceOracle:
    @pytest.mark.parametrize(
        "make,tol", [(lambda: linear(3, 4), 1e-5), (lambda: mlp(3, 4, 5), 1e-4)]
    )
    def test_matches_analytic(self, make, tol):
        policy = make()
        rng = np.random.default_rng(11)
        for _ in range(25):
            params = ParamVector(
                rng.uniform(-1, 1, policy.param_count), policy.segments
            )
            context = rng.uniform(-2, 2, 3)
            action = int(rng.integers(0, 4))
            analytic = policy.grad_log_prob(params, context, action)
            fd = policy.finite_diff_grad(params, context, action, 1e-5)
            err = np.linalg.norm(analytic.values - fd.values)
            assert err / max(np.linalg.norm(fd.values), 1e-12) < tol

    def test_zero_step_rejected(self):
        p = linear(2, 2)
        with pytest.raises(ContractError):
            p.finite_diff_grad(p.init_params(), [1.0, 0.0], 0, 0.0)

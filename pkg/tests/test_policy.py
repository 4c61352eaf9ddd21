import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amf.env import DemoDataset, Task, Trajectory, evaluation_task_set, policy_inputs
from amf.expert import NoiseModel, ScriptedExpert, demonstrate
from amf.gp import RbfKernel
from amf.policy import (
    AdaptivePrior,
    FeatureLinearPolicy,
    RandomFourierFeatures,
    act,
    alpha_grad,
    alpha_loss,
    embedding_kernel,
    fit_gp_policy,
    fit_linear_policy,
    gaussian_log_probs,
    log_prob,
    mixed_act,
    update_alpha,
)

seeds = st.integers(0, 2**32 - 1)


def demos(count, seed=0, tasks=None):
    tasks = tasks or evaluation_task_set(12)
    rng = np.random.default_rng(seed)
    data = DemoDataset()
    for k in range(count):
        data.append(demonstrate(ScriptedExpert(), NoiseModel(0.05), tasks[k % len(tasks)], 5, rng))
    return data


def linear_policy(seed=0, **kw):
    return FeatureLinearPolicy.zeros(RandomFourierFeatures.create(seed=seed), **kw)


class TestGpPolicy:
    def test_empty_acts_zero(self):
        policy = fit_gp_policy(DemoDataset(), RbfKernel(), 0.0025)
        np.testing.assert_array_equal(act(policy, [0.2, 0.1], Task(1.0)), [0.0, 0.0])

    def test_empty_is_prior(self, rng):
        policy = fit_gp_policy(DemoDataset(), RbfKernel(1.0, 1.7), 0.0025)
        np.testing.assert_array_equal(policy.condition.variances(rng.normal(size=(5, 4))), 1.7)

    def test_interpolates_single_pair(self):
        c, s, a = Task(0.7), np.array([0.1, -0.3]), np.array([0.2, 0.05])
        data = DemoDataset([Trajectory(c, s[None], a[None])])
        policy = fit_gp_policy(data, RbfKernel(), 1e-12)
        np.testing.assert_allclose(act(policy, s, c), a, atol=1e-6)

    def test_fit_never_raises_variance(self, rng):
        kernel = RbfKernel()
        before = fit_gp_policy(DemoDataset(), kernel, 0.0025)
        after = fit_gp_policy(demos(5), kernel, 0.0025)
        probes = np.hstack([rng.uniform(-1, 1, (10, 2)), np.array([Task(a).encoding for a in rng.uniform(0, 6.28, 10)])])
        assert np.all(after.condition.variances(probes) <= before.condition.variances(probes))

    def test_conditioning_set_size(self):
        assert len(fit_gp_policy(demos(12), RbfKernel(), 0.0025).condition) == 60

    def test_act_is_deterministic(self):
        policy = fit_gp_policy(demos(4), RbfKernel(), 0.0025)
        assert np.array_equal(act(policy, [0.3, 0.3], Task(0.2)), act(policy, [0.3, 0.3], Task(0.2)))

    def test_variance_shrinks_as_data_grows(self, rng):
        probes = rng.uniform(-1, 1, size=(20, 4))
        data = demos(8, seed=3)
        prev = None
        for n in range(9):
            var = fit_gp_policy(DemoDataset(data.trajectories[:n]), RbfKernel(), 0.0025).condition.variances(probes)
            if prev is not None:
                assert np.all(var <= prev + 1e-10)
            prev = var


class TestLinearPolicy:
    def test_zero_weights_act_zero(self):
        np.testing.assert_array_equal(act(linear_policy(), [0.5, 0.5], Task(2.0)), [0.0, 0.0])

    @pytest.mark.parametrize("steps, lr", [(0, 0.1), (100, 0.0)])
    def test_no_op_fits(self, steps, lr):
        policy = linear_policy()
        assert fit_linear_policy(policy, demos(3), steps, lr) is policy

    def test_realizable_targets_reach_least_squares(self):
        # spread-out states keep the feature Gram well conditioned
        r = np.random.default_rng(5)
        policy = linear_policy(seed=5)
        b_star = r.normal(size=(policy.features.num_features, 2))
        data = DemoDataset()
        for k in range(4):
            c = Task(float(r.uniform(0, 2 * math.pi)))
            states = r.uniform(-3, 3, size=(5, 2))
            data.append(Trajectory(c, states, policy.features(policy_inputs(states, c)) @ b_star))
        phi, targets = policy.features(data.inputs()), data.targets()
        opt, *_ = np.linalg.lstsq(phi, targets, rcond=None)
        opt_mse = np.mean(np.sum((targets - phi @ opt) ** 2, axis=1))
        fitted = fit_linear_policy(policy, data, 5000, 0.1)
        mse = np.mean(np.sum((targets - fitted.act_many(data.inputs())) ** 2, axis=1))
        assert abs(mse - opt_mse) <= 1e-4

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        with pytest.raises(FloatingPointError, match="non-finite"):
            fit_linear_policy(linear_policy(), demos(12), 2000, 500.0)


class TestLogProb:
    def test_mode_density(self):
        assert log_prob(linear_policy(), [0.0, 0.0], [0.1, 0.2], Task(0.3)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_floor(self):
        assert log_prob(linear_policy(), [1e3, -1e3], [0.1, 0.2], Task(0.3)) == -12.0

    def test_ceiling(self):
        variance = math.exp(-0.3) / (2 * math.pi)
        raw = gaussian_log_probs(np.zeros((1, 2)), np.zeros((1, 2)), np.array([variance]), clip=None)
        assert raw[0] == pytest.approx(0.3, abs=1e-12)
        assert gaussian_log_probs(np.zeros((1, 2)), np.zeros((1, 2)), np.array([variance]))[0] == 0.0

    def test_gp_uses_predictive_variance(self):
        policy = fit_gp_policy(demos(3), RbfKernel(), 0.0025)
        x = policy_inputs(np.array([0.4, 0.0]), Task(0.0))
        var = policy.condition.variances(x)[0] + 0.0025
        expected = -math.log(2 * math.pi * var)
        assert log_prob(policy, policy.act_many(x)[0], [0.4, 0.0], Task(0.0), clip=None) == pytest.approx(expected, abs=1e-10)


class TestEmbeddingKernel:
    def test_self_similarity(self, rng):
        policy = linear_policy()
        x = rng.normal(size=4)
        phi = policy.features(x)[0]
        assert embedding_kernel(policy, x, x) == pytest.approx(phi @ phi, abs=1e-14)

    def test_orthogonal_embeddings(self):
        freqs = np.zeros((4, 2))
        freqs[0] = math.pi / 2
        features = RandomFourierFeatures(freqs, np.array([0.0, -math.pi / 2]))
        policy = FeatureLinearPolicy.zeros(features)
        assert embedding_kernel(policy, [0.0, 0, 0, 0], [1.0, 0, 0, 0]) == pytest.approx(0.0, abs=1e-15)

    @given(seed=seeds)
    def test_gram_is_psd(self, seed):
        policy = linear_policy()
        x = np.random.default_rng(seed).normal(size=(8, 4))
        gram = policy.covariance_kernel.gram(x, x)
        assert np.linalg.eigvalsh(gram).min() >= -1e-9

    def test_loss_gradient_scales_last_layer(self, rng):
        x = rng.normal(size=(3, 4))
        plain = linear_policy()
        grad = dataclasses.replace(plain, embedding_kind="loss_gradient", residual_scale=0.05)
        np.testing.assert_allclose(grad.covariance_kernel.gram(x, x), 0.05**2 * plain.covariance_kernel.gram(x, x), rtol=1e-12)

    def test_features_approximate_rbf(self, rng):
        features = RandomFourierFeatures.create(num_features=20000, seed=1)
        x = rng.normal(scale=0.5, size=(4, 4))
        phi = features(x)
        np.testing.assert_allclose(phi @ phi.T, RbfKernel().gram(x, x), atol=0.03)


class _Constant:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def act_many(self, inputs):
        return np.tile(self.value, (np.atleast_2d(inputs).shape[0], 1))


class TestAdaptivePrior:
    tasks = evaluation_task_set(4)

    def prior(self, alpha, value=(0.0, 1.0), **kw):
        ap = AdaptivePrior.create(_Constant(value), self.tasks, **kw)
        return dataclasses.replace(ap, alpha=np.full(4, alpha))

    @pytest.mark.parametrize("alpha, expected", [(1.0, [1.0, 0.0]), (0.0, [0.0, 1.0]), (0.5, [0.5, 0.5])])
    def test_mixture(self, alpha, expected):
        out = mixed_act(self.prior(alpha), _Constant([1.0, 0.0]), [0.0, 0.0], self.tasks[0])
        np.testing.assert_allclose(out, expected, atol=1e-15)

    @given(alpha=st.floats(0, 1), fine=st.tuples(st.floats(-5, 5), st.floats(-5, 5)), pre=st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
    def test_mixture_is_convex(self, alpha, fine, pre):
        out = mixed_act(self.prior(alpha, pre), _Constant(fine), [0.0, 0.0], self.tasks[1])
        lo, hi = np.minimum(fine, pre), np.maximum(fine, pre)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_scalar_gradient_example(self):
        g = alpha_grad(np.array([0.5]), np.array([[1.0]]), np.array([[1.0]]), np.array([[0.0]]), np.array([0]), 1, 0.01)
        assert g[0] == pytest.approx(-0.99, abs=1e-15)

    def test_alpha_moves_toward_helpful_finetune(self):
        c = self.tasks[0]
        data = DemoDataset([Trajectory(c, np.zeros((5, 2)), np.tile([1.0, 0.0], (5, 1)))])
        ap = self.prior(0.5)
        out = update_alpha(ap, _Constant([1.0, 0.0]), data, 1)
        assert out.alpha[0] > 0.5

    def test_identical_policies_shrink_alpha(self):
        c = self.tasks[2]
        data = DemoDataset([Trajectory(c, np.zeros((5, 2)), np.zeros((5, 2)))])
        ap = self.prior(0.5, value=(0.3, 0.3))
        g = alpha_grad(ap.alpha, data.targets(), np.full((5, 2), 0.3), np.full((5, 2), 0.3), np.full(5, 2), 1, 0.01)
        assert g[2] == pytest.approx(0.01, abs=1e-15)
        assert update_alpha(ap, _Constant([0.3, 0.3]), data, 1).alpha[2] < 0.5

    def test_defaults(self):
        ap = AdaptivePrior.create(_Constant([0, 0]), self.tasks)
        assert ap.alpha_lr == 1.0 and ap.conservative_beta == 0.01

    @given(seed=seeds, steps=st.integers(0, 20), lr=st.floats(0.01, 50))
    def test_alpha_stays_in_unit_interval(self, seed, steps, lr):
        r = np.random.default_rng(seed)
        data = DemoDataset([
            Trajectory(self.tasks[k % 4], r.normal(size=(5, 2)), r.normal(size=(5, 2))) for k in range(6)
        ])
        ap = AdaptivePrior.create(_Constant(r.normal(size=2)), self.tasks, float(r.uniform()), alpha_lr=lr)
        out = update_alpha(ap, _Constant(r.normal(size=2)), data, steps)
        assert np.all((out.alpha >= 0) & (out.alpha <= 1))

    @given(seed=seeds, vector=st.booleans())
    def test_gradient_matches_finite_differences(self, seed, vector):
        r = np.random.default_rng(seed)
        k, dims, n = (4, 2, 6) if vector else (1, 1, 1)
        horizon = 5 if vector else 1
        alpha = r.uniform(0.05, 0.95, size=k)
        task_index = np.repeat(r.integers(0, k, size=n), horizon)
        actions, fine, prior = r.normal(size=(3, n * horizon, dims))
        analytic = alpha_grad(alpha, actions, fine, prior, task_index, n, 0.01)
        eps = 1e-6
        for i in range(k):
            up, down = alpha.copy(), alpha.copy()
            up[i] += eps
            down[i] -= eps
            fd = (alpha_loss(up, actions, fine, prior, task_index, n, 0.01) - alpha_loss(down, actions, fine, prior, task_index, n, 0.01)) / (2 * eps)
            assert abs(analytic[i] - fd) <= 1e-6 * max(1.0, abs(fd))

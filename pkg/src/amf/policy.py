"""Imitator policies: GP policy, feature-linear policy with embedding kernel, adaptive prior."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .env import DemoDataset, Task, nearest_task_index, policy_inputs
from .gp import DEFAULT_JITTER, GpCondition, NumericalError, RbfKernel

LOGPROB_CLIP = (-12.0, 0.0)


@dataclass(frozen=True, eq=False)
class GPPolicy:
    """Posterior-mean policy of a GP conditioned on (state, task) -> action pairs.

    ``fixed_std`` replaces predictive-variance-plus-noise in ``log_prob`` when set.
    """

    kernel: RbfKernel
    condition: GpCondition
    noise_variance: float
    action_dim: int = 2
    fixed_std: float | None = None

    def act_many(self, inputs) -> np.ndarray:
        return self.condition.means(inputs)

    def action_variance(self, inputs) -> np.ndarray:
        """Variance of the Gaussian used to score actions."""
        if self.fixed_std is not None:
            return np.full(np.atleast_2d(inputs).shape[0], self.fixed_std**2)
        var = np.maximum(self.condition.variances(inputs), 0.0)
        return var + self.noise_variance

    @property
    def covariance_kernel(self) -> RbfKernel:
        return self.kernel


def fit_gp_policy(
    dataset: DemoDataset,
    kernel: RbfKernel,
    noise_variance: float,
    action_dim: int = 2,
    jitter: float = DEFAULT_JITTER,
    fixed_std: float | None = None,
) -> GPPolicy:
    targets = dataset.targets() if len(dataset) else np.zeros((0, action_dim))
    try:
        cond = GpCondition.build(
            kernel, dataset.inputs(), targets, noise_variance, jitter, input_dim=4
        )
    except NumericalError as err:
        raise NumericalError(f"{err} [{len(dataset)} demonstrations]") from err
    return GPPolicy(kernel, cond, noise_variance, action_dim, fixed_std)


@dataclass(frozen=True, eq=False)
class RandomFourierFeatures:
    """phi(x) = sqrt(2 s / p) cos(W x + b), whose inner product approximates an RBF kernel."""

    frequencies: np.ndarray
    offsets: np.ndarray
    signal_variance: float = 1.0

    @classmethod
    def create(
        cls,
        input_dim: int = 4,
        num_features: int = 256,
        lengthscale: float = 1.0,
        signal_variance: float = 1.0,
        seed: int = 0,
    ) -> RandomFourierFeatures:
        rng = np.random.default_rng(seed)
        freqs = rng.normal(0.0, 1.0 / lengthscale, size=(input_dim, num_features))
        offsets = rng.uniform(0.0, 2.0 * math.pi, size=num_features)
        return cls(freqs, offsets, signal_variance)

    @property
    def num_features(self) -> int:
        return self.offsets.shape[0]

    def __call__(self, inputs) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        scale = math.sqrt(2.0 * self.signal_variance / self.num_features)
        return scale * np.cos(inputs @ self.frequencies + self.offsets)


EMBEDDING_KINDS = ("last_layer", "loss_gradient")


@dataclass(frozen=True, eq=False)
class FeatureLinearPolicy:
    """Linear head ``B^T phi(s, c)`` over fixed random features.

    With a N(0, I) prior on ``B`` this is a GP with kernel ``<phi(x), phi(x')>``.
    For ``loss_gradient`` embeddings the pseudo-label is the policy's own
    prediction displaced by ``residual_scale`` along a unit direction, so the
    squared-loss gradient embedding is ``residual_scale * phi``.
    """

    features: RandomFourierFeatures
    weights: np.ndarray
    embedding_kind: str = "last_layer"
    residual_scale: float = 0.05
    std: float = 1.0

    def __post_init__(self):
        if self.embedding_kind not in EMBEDDING_KINDS:
            raise ValueError(f"embedding_kind must be one of {EMBEDDING_KINDS}")
        if self.weights.shape[0] != self.features.num_features:
            raise ValueError("weight rows must match the feature dimension")

    @classmethod
    def zeros(cls, features: RandomFourierFeatures, action_dim: int = 2, **kw) -> FeatureLinearPolicy:
        return cls(features, np.zeros((features.num_features, action_dim)), **kw)

    @property
    def action_dim(self) -> int:
        return self.weights.shape[1]

    def act_many(self, inputs) -> np.ndarray:
        return self.features(inputs) @ self.weights

    def action_variance(self, inputs) -> np.ndarray:
        return np.full(np.atleast_2d(inputs).shape[0], self.std**2)

    def embed(self, inputs) -> np.ndarray:
        phi = self.features(inputs)
        if self.embedding_kind == "loss_gradient":
            return self.residual_scale * phi
        return phi

    @property
    def covariance_kernel(self) -> EmbeddingKernel:
        return EmbeddingKernel(self)


@dataclass(frozen=True, eq=False)
class EmbeddingKernel:
    policy: FeatureLinearPolicy

    def gram(self, a, b) -> np.ndarray:
        return self.policy.embed(a) @ self.policy.embed(b).T

    def diag(self, a) -> np.ndarray:
        e = self.policy.embed(a)
        return np.sum(e * e, axis=1)


def embedding_kernel(policy: FeatureLinearPolicy, x, x_prime) -> float:
    return float(EmbeddingKernel(policy).gram(np.atleast_2d(x), np.atleast_2d(x_prime))[0, 0])


def act(policy, s, c: Task) -> np.ndarray:
    return policy.act_many(policy_inputs(np.asarray(s, dtype=float), c))[0]


def gaussian_log_probs(actions, means, variances, clip=LOGPROB_CLIP) -> np.ndarray:
    """Row-wise isotropic Gaussian log-density, clipped to ``clip``."""
    actions = np.atleast_2d(actions)
    means = np.atleast_2d(means)
    d = actions.shape[1]
    sq = np.sum((actions - means) ** 2, axis=1)
    lp = -0.5 * d * np.log(2.0 * math.pi * variances) - 0.5 * sq / variances
    if clip is None:
        return lp
    return np.clip(lp, clip[0], clip[1])


def log_probs(policy, actions, inputs, clip=LOGPROB_CLIP) -> np.ndarray:
    inputs = np.atleast_2d(inputs)
    return gaussian_log_probs(actions, policy.act_many(inputs), policy.action_variance(inputs), clip)


def log_prob(policy, a, s, c: Task, clip=LOGPROB_CLIP) -> float:
    x = policy_inputs(np.asarray(s, dtype=float), c)
    return float(log_probs(policy, np.atleast_2d(a), x, clip)[0])


def fit_linear_policy(
    policy: FeatureLinearPolicy, dataset: DemoDataset, steps: int, lr: float
) -> FeatureLinearPolicy:
    """Full-batch gradient descent on the mean squared action error."""
    if steps < 0 or lr < 0:
        raise ValueError("steps and lr must be non-negative")
    if steps == 0 or lr == 0 or len(dataset) == 0:
        return policy
    phi = policy.features(dataset.inputs())
    targets = dataset.targets()
    # the gradient is affine in B, so precompute the normal-equation pieces
    gram = phi.T @ phi / phi.shape[0]
    cross = phi.T @ targets / phi.shape[0]
    weights = policy.weights.copy()
    for _ in range(steps):
        weights -= lr * 2.0 * (gram @ weights - cross)
    loss = float(np.mean(np.sum((targets - phi @ weights) ** 2, axis=1)))
    if not math.isfinite(loss) or not np.all(np.isfinite(weights)):
        raise FloatingPointError(
            f"non-finite BC loss after {steps} steps at lr={lr} on {len(dataset)} demonstrations"
        )
    return dataclasses.replace(policy, weights=weights)


def bc_loss(policy, dataset: DemoDataset) -> float:
    return float(np.mean(np.sum((dataset.targets() - policy.act_many(dataset.inputs())) ** 2, axis=1)))


@dataclass(frozen=True, eq=False)
class AdaptivePrior:
    """Frozen pre-trained policy plus a per-task mixing weight table."""

    prior_policy: object
    tasks: tuple[Task, ...]
    alpha: np.ndarray
    conservative_beta: float = 0.01
    alpha_lr: float = 1.0

    def __post_init__(self):
        if np.any(self.alpha < 0) or np.any(self.alpha > 1):
            raise ValueError("alpha entries must lie in [0, 1]")

    @classmethod
    def create(cls, prior_policy, tasks, initial_alpha: float = 0.0, **kw) -> AdaptivePrior:
        return cls(prior_policy, tuple(tasks), np.full(len(tasks), float(initial_alpha)), **kw)

    def alpha_for(self, c: Task) -> float:
        return float(self.alpha[nearest_task_index(c, list(self.tasks))])


def mixed_act(ap: AdaptivePrior, finetuned, s, c: Task) -> np.ndarray:
    alpha = ap.alpha_for(c)
    return alpha * act(finetuned, s, c) + (1.0 - alpha) * act(ap.prior_policy, s, c)


def mixed_act_many(ap: AdaptivePrior, finetuned, inputs, c: Task) -> np.ndarray:
    alpha = ap.alpha_for(c)
    return alpha * finetuned.act_many(inputs) + (1.0 - alpha) * ap.prior_policy.act_many(inputs)


def alpha_loss(alpha, actions, fine_actions, prior_actions, task_index, num_demos, beta) -> float:
    """Mixed-action squared error summed over steps, averaged over demonstrations, plus penalty.

    Arrays are per (state, action) pair; ``task_index`` maps each pair to its alpha entry and
    ``num_demos`` is the number of demonstrations N. The penalty is ``beta * mean_i alpha(c_i)``,
    counted once per demonstration.
    """
    alpha = np.asarray(alpha, dtype=float)
    a_w = alpha[task_index][:, None]
    mix = a_w * fine_actions + (1.0 - a_w) * prior_actions
    bc = np.sum((actions - mix) ** 2) / num_demos
    return float(bc + beta * _penalty_mass(alpha, task_index, num_demos, actions.shape[0]))


def alpha_grad(alpha, actions, fine_actions, prior_actions, task_index, num_demos, beta) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    a_w = alpha[task_index][:, None]
    diff = fine_actions - prior_actions
    resid = actions - (a_w * fine_actions + (1.0 - a_w) * prior_actions)
    per_pair = -2.0 * np.sum(resid * diff, axis=1) / num_demos
    grad = np.bincount(task_index, weights=per_pair, minlength=alpha.shape[0])
    horizon = actions.shape[0] // num_demos
    counts = np.bincount(task_index, minlength=alpha.shape[0]) / horizon
    return grad + beta * counts / num_demos


def _penalty_mass(alpha, task_index, num_demos, num_pairs) -> float:
    horizon = num_pairs // num_demos
    return float(np.sum(alpha[task_index]) / horizon / num_demos)


def update_alpha(ap: AdaptivePrior, finetuned, dataset: DemoDataset, steps: int) -> AdaptivePrior:
    """Projected gradient descent on the mixing weights; entries stay in [0, 1]."""
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    if steps == 0 or len(dataset) == 0:
        return ap
    inputs = dataset.inputs()
    actions = dataset.targets()
    fine = finetuned.act_many(inputs)
    prior = ap.prior_policy.act_many(inputs)
    tasks = list(ap.tasks)
    horizon = dataset.trajectories[0].horizon
    task_index = np.repeat([nearest_task_index(c, tasks) for c in dataset.tasks], horizon)
    alpha = ap.alpha.copy()
    for _ in range(steps):
        g = alpha_grad(alpha, actions, fine, prior, task_index, len(dataset), ap.conservative_beta)
        alpha = np.clip(alpha - ap.alpha_lr * g, 0.0, 1.0)
    return dataclasses.replace(ap, alpha=alpha)

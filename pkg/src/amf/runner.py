"""Pre-training, the active fine-tuning loop, evaluation and summary statistics."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .env import (
    ContextualMdpSpec,
    DemoDataset,
    Task,
    evaluation_task_set,
    evaluation_weights,
    nearest_task_index,
    policy_inputs,
    reset,
    step,
)
from .expert import NoiseModel, ScriptedExpert, demonstrate, expert_actions
from .gp import GpCondition, NumericalError, RbfKernel, gaussian_entropy
from .policy import (
    AdaptivePrior,
    EmbeddingKernel,
    FeatureLinearPolicy,
    GPPolicy,
    RandomFourierFeatures,
    fit_gp_policy,
    fit_linear_policy,
    update_alpha,
)
from .selection import (
    CriterionConfig,
    ScoringContext,
    SelectionStrategy,
    StrategyKind,
    amf_scores,
    candidate_tasks,
    prior_entropy_scores,
    select_index,
)

log = logging.getLogger(__name__)

# tags separating the random streams derived from one experiment seed
_PRETRAIN, _DEMO, _SELECT, _CANDIDATES, _FEATURES = range(5)


def stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *tags])


@dataclass(frozen=True)
class ExperimentConfig:
    budget: int = 40
    batch: int = 1
    eval_task_count: int = 12
    # None means one demonstration per evaluation task
    pretrain_allocation: tuple[int, ...] | None = None
    strategy: SelectionStrategy = field(default_factory=SelectionStrategy)
    policy_kind: str = "gp"
    adaptive_prior: bool = False
    seeds: tuple[int, ...] = tuple(range(10))
    eval_episodes: int = 20
    criterion: CriterionConfig = field(default_factory=CriterionConfig)
    task_space: str = "circle"
    horizon: int = 5
    discount: float = 0.99
    goal_radius: float = 1.0
    max_speed: float = 0.25
    noise_std: float = 0.05
    lengthscale: float = 1.0
    signal_variance: float = 1.0
    # None means noise_std ** 2
    gp_noise_variance: float | None = None
    # fixed std for GP action likelihoods; None uses predictive variance plus noise
    likelihood_std: float | None = 1.0
    num_features: int = 256
    embedding_kind: str = "last_layer"
    linear_lr: float = 0.5
    pretrain_steps: int = 3000
    finetune_steps: int = 300
    initial_alpha: float = 0.0
    alpha_steps: int = 50
    alpha_lr: float = 1.0
    conservative_beta: float = 0.01

    def __post_init__(self):
        if self.budget < 1 or self.batch < 1 or self.eval_episodes < 1:
            raise ValueError("budget, batch and eval_episodes must be >= 1")
        if self.eval_task_count < 1:
            raise ValueError("eval_task_count must be >= 1")
        if self.pretrain_allocation is not None:
            if len(self.pretrain_allocation) != self.eval_task_count:
                raise ValueError(
                    f"pretrain_allocation has {len(self.pretrain_allocation)} entries, "
                    f"expected {self.eval_task_count}"
                )
            if any(a < 0 for a in self.pretrain_allocation):
                raise ValueError("pretrain_allocation entries must be non-negative")
        if self.policy_kind not in ("gp", "feature_linear"):
            raise ValueError(f"unknown policy_kind {self.policy_kind!r}")
        if self.task_space not in ("circle", "discrete"):
            raise ValueError(f"unknown task_space {self.task_space!r}")

    @property
    def mdp(self) -> ContextualMdpSpec:
        return ContextualMdpSpec(horizon=self.horizon, discount=self.discount, goal_radius=self.goal_radius)

    @property
    def expert(self) -> ScriptedExpert:
        return ScriptedExpert(self.max_speed, self.goal_radius)

    @property
    def kernel(self) -> RbfKernel:
        return RbfKernel(self.lengthscale, self.signal_variance)

    @property
    def noise_variance(self) -> float:
        return self.noise_std**2 if self.gp_noise_variance is None else self.gp_noise_variance

    @property
    def allocation(self) -> tuple[int, ...]:
        return self.pretrain_allocation or (1,) * self.eval_task_count

    @property
    def eval_tasks(self) -> list[Task]:
        return evaluation_task_set(self.eval_task_count)


def allocation_preset(demonstrated: int, total_tasks: int = 12, total_demos: int = 12) -> tuple[int, ...]:
    """Spread ``total_demos`` as evenly as possible over the first ``demonstrated`` tasks."""
    if not 0 <= demonstrated <= total_tasks:
        raise ValueError(f"cannot demonstrate {demonstrated} of {total_tasks} tasks")
    if demonstrated == 0:
        return (0,) * total_tasks
    base, extra = divmod(total_demos, demonstrated)
    head = [base + (1 if i < extra else 0) for i in range(demonstrated)]
    return tuple(head + [0] * (total_tasks - demonstrated))


def parse_allocation(text: str, total_tasks: int = 12) -> tuple[int, ...]:
    """``"uniform"``, ``"6of12"`` / ``"6/12"``, or explicit comma-separated counts."""
    text = text.strip()
    if text == "uniform":
        return (1,) * total_tasks
    for sep in ("of", "/"):
        if sep in text:
            k, n = text.split(sep)
            if int(n) != total_tasks:
                raise ValueError(f"preset {text!r} does not match {total_tasks} evaluation tasks")
            return allocation_preset(int(k), total_tasks)
    counts = tuple(int(x) for x in text.split(","))
    if len(counts) != total_tasks:
        raise ValueError(f"expected {total_tasks} counts, got {len(counts)}")
    return counts


@dataclass
class RoundMetrics:
    round: int
    task: Task
    mean_return: float
    mean_entropy: float
    counts: tuple[int, ...]
    ms: float
    warm_start: bool = False
    task_returns: tuple[float, ...] = ()


@dataclass
class Learner:
    """Mutable per-run state: the current policy and what it was built from."""

    cfg: ExperimentConfig
    policy: GPPolicy | FeatureLinearPolicy
    pretrain: DemoDataset
    finetune: DemoDataset = field(default_factory=DemoDataset)
    prior: AdaptivePrior | None = None
    refits: int = 0

    def covariance_condition(self) -> GpCondition:
        if isinstance(self.policy, GPPolicy):
            return self.policy.condition
        return GpCondition.build(
            EmbeddingKernel(self.policy), self.finetune.inputs(),
            noise_variance=self.cfg.noise_variance, input_dim=4,
        )

    def refit(self) -> None:
        cfg = self.cfg
        if isinstance(self.policy, GPPolicy):
            both = self.pretrain.extended(*self.finetune)
            self.policy = fit_gp_policy(both, cfg.kernel, cfg.noise_variance, fixed_std=cfg.likelihood_std)
        else:
            self.policy = fit_linear_policy(self.policy, self.finetune, cfg.finetune_steps, cfg.linear_lr)
        if self.prior is not None:
            self.prior = update_alpha(self.prior, self.policy, self.finetune, cfg.alpha_steps)
        self.refits += 1

    def actions(self, inputs: np.ndarray, tasks: list[Task]) -> np.ndarray:
        """Row i is scored under ``tasks[i]``; the adaptive-prior mixture applies when enabled."""
        if self.prior is None:
            return self.policy.act_many(inputs)
        alpha = np.array([self.prior.alpha_for(c) for c in tasks])[:, None]
        return alpha * self.policy.act_many(inputs) + (1.0 - alpha) * self.prior.prior_policy.act_many(inputs)


def collect(cfg: ExperimentConfig, c: Task, rng: np.random.Generator):
    return demonstrate(cfg.expert, NoiseModel(cfg.noise_std), c, cfg.horizon, rng)


def pretrain(cfg: ExperimentConfig, seed: int) -> tuple[GPPolicy | FeatureLinearPolicy, DemoDataset]:
    data = DemoDataset()
    for i, (c, count) in enumerate(zip(cfg.eval_tasks, cfg.allocation)):
        for k in range(count):
            data.append(collect(cfg, c, stream(seed, _PRETRAIN, i, k)))
    if cfg.policy_kind == "gp":
        return fit_gp_policy(data, cfg.kernel, cfg.noise_variance, fixed_std=cfg.likelihood_std), data
    features = RandomFourierFeatures.create(
        4, cfg.num_features, cfg.lengthscale, cfg.signal_variance,
        seed=int(stream(seed, _FEATURES).integers(2**63)),
    )
    policy = FeatureLinearPolicy.zeros(
        features, embedding_kind=cfg.embedding_kind, residual_scale=cfg.noise_std
    )
    return fit_linear_policy(policy, data, cfg.pretrain_steps, cfg.linear_lr), data


def rollout_states(act_fn, tasks: list[Task], spec: ContextualMdpSpec) -> np.ndarray:
    """States (task, t, dim) visited from reset by a deterministic policy.

    ``act_fn(inputs, tasks)`` maps one (state, task) row per task to actions.
    """
    enc = np.array([c.encoding for c in tasks])
    out = np.zeros((len(tasks), spec.horizon, spec.state_dim))
    s = np.tile(reset(spec), (len(tasks), 1))
    for t in range(spec.horizon):
        out[:, t] = s
        s = step(s, act_fn(np.hstack([s, enc]), tasks))
    return out


def evaluate_policy(act_fn, tasks: list[Task], episodes: int, spec: ContextualMdpSpec) -> np.ndarray:
    """Mean discounted H-step return per task over ``episodes`` rollouts."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    goals = np.array([c.goal(spec.goal_radius) for c in tasks])
    disc = spec.discount ** np.arange(spec.horizon)
    totals = np.zeros(len(tasks))
    for _ in range(episodes):
        states = rollout_states(act_fn, tasks, spec)
        dist = np.linalg.norm(states - goals[:, None, :], axis=2)
        totals += -(dist @ disc)
    return totals / episodes


def entropy_probes(cfg: ExperimentConfig) -> np.ndarray:
    """Noise-free expert occupancy of every evaluation task, as (state, task) rows."""
    expert = cfg.expert
    states = rollout_states(
        lambda x, tasks: np.vstack([expert_actions(expert, x[i, :2], c) for i, c in enumerate(tasks)]),
        cfg.eval_tasks, cfg.mdp,
    )
    return np.vstack([policy_inputs(states[k], c) for k, c in enumerate(cfg.eval_tasks)])


def mean_policy_entropy(cond: GpCondition, probes: np.ndarray, action_dim: int = 2) -> float:
    if np.atleast_2d(probes).shape[0] == 0:
        raise ValueError("entropy probe set is empty")
    var = np.maximum(cond.variances(probes), 1e-300)
    return float(np.mean(gaussian_entropy(var, action_dim)))


def bootstrap_ci(samples, level: float = 0.9, resamples: int = 1000, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("bootstrap needs at least one sample")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


def choose_task(learner: Learner, cfg: ExperimentConfig, seed: int, n: int, counts: np.ndarray, weight_log: list | None = None) -> Task:
    strategy = cfg.strategy
    eval_tasks = cfg.eval_tasks
    if strategy.kind is StrategyKind.UNIFORM:
        return eval_tasks[select_index(strategy, len(eval_tasks), rng=stream(seed, _SELECT, n))]
    if strategy.kind is StrategyKind.REBALANCING:
        return eval_tasks[select_index(strategy, len(eval_tasks), counts=counts)]
    space = eval_tasks if cfg.task_space == "discrete" else "circle"
    candidates = candidate_tasks(space, cfg.criterion, stream(seed, _CANDIDATES, n))
    ctx = ScoringContext(
        learner.policy, learner.covariance_condition(), list(learner.finetune),
        learner.finetune.tasks, eval_tasks, evaluation_weights(len(eval_tasks)), cfg.criterion,
    )
    if weight_log is not None:
        w, clipped = ctx.weights(candidates)
        for j in range(w.shape[0]):
            for k, c in enumerate(candidates):
                weight_log.append((n, j, c.angle, float(w[j, k]), bool(clipped[j, k])))
    if strategy.kind is StrategyKind.AMF:
        scores = amf_scores(ctx, candidates)
    else:
        scores = prior_entropy_scores(ctx, candidates)
    return candidates[select_index(strategy, len(candidates), scores=scores)]


def make_learner(cfg: ExperimentConfig, seed: int) -> Learner:
    policy, data = pretrain(cfg, seed)
    learner = Learner(cfg, policy, data)
    if cfg.adaptive_prior:
        learner.prior = AdaptivePrior.create(
            policy, cfg.eval_tasks, cfg.initial_alpha,
            conservative_beta=cfg.conservative_beta, alpha_lr=cfg.alpha_lr,
        )
    return learner


@dataclass
class RunResult:
    seed: int
    metrics: list[RoundMetrics]
    weights: list = field(default_factory=list)
    error: str | None = None
    refits: int = 0
    initial_return: float = float("nan")
    initial_task_returns: tuple[float, ...] = ()


def run_experiment(cfg: ExperimentConfig, seed: int, record_weights: bool = False) -> RunResult:
    """One seed of the active fine-tuning loop.

    Rounds 1..|C| form the warm start (one demonstration per evaluation task, in
    order) and count against the budget; later rounds query the strategy. The
    policy is refit every ``batch`` rounds.
    """
    eval_tasks = cfg.eval_tasks
    spec = cfg.mdp
    probes = entropy_probes(cfg)
    learner = make_learner(cfg, seed)
    counts = np.zeros(len(eval_tasks), dtype=int)
    initial = evaluate_policy(learner.actions, eval_tasks, 1, spec)
    result = RunResult(seed, [], initial_return=float(initial.mean()), initial_task_returns=tuple(initial))
    weight_log = [] if record_weights else None
    for n in range(1, cfg.budget + 1):
        t0 = time.perf_counter()
        warm = n <= len(eval_tasks)
        try:
            if warm:
                task = eval_tasks[n - 1]
            else:
                task = choose_task(learner, cfg, seed, n, counts, weight_log)
            learner.finetune.append(collect(cfg, task, stream(seed, _DEMO, n)))
            if n % cfg.batch == 0:
                learner.refit()
            returns = evaluate_policy(learner.actions, eval_tasks, cfg.eval_episodes, spec)
            entropy = mean_policy_entropy(learner.covariance_condition(), probes)
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as err:
            log.error("seed %d round %d failed: %s", seed, n, err)
            result.error = f"round {n}: {err}"
            break
        counts[nearest_task_index(task, eval_tasks)] += 1
        result.metrics.append(RoundMetrics(
            n, task, float(returns.mean()), entropy, tuple(int(c) for c in counts),
            1000.0 * (time.perf_counter() - t0), warm, tuple(float(r) for r in returns),
        ))
    result.weights = weight_log or []
    result.refits = learner.refits
    return result


def run_seeds(cfg: ExperimentConfig, jobs: int = 1, record_weights: bool = False) -> list[RunResult]:
    if jobs <= 1 or len(cfg.seeds) <= 1:
        return [run_experiment(cfg, s, record_weights) for s in cfg.seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_experiment, cfg, s, record_weights) for s in cfg.seeds]
        return [f.result() for f in futures]


def with_strategy(cfg: ExperimentConfig, kind: str | StrategyKind) -> ExperimentConfig:
    kind = StrategyKind(kind)
    pre = tuple(cfg.allocation) if kind is StrategyKind.REBALANCING else ()
    return dataclasses.replace(cfg, strategy=SelectionStrategy(kind, pre))

"""Task selection: the information-gain criterion and the baseline strategies.

The criterion scores a candidate task ``c'`` by the expected posterior entropy of
the policy over the evaluation occupancy after a hypothetical demonstration of
``c'``. Occupancies of arbitrary tasks are approximated by importance-reweighting
the reference trajectories collected so far; the hypothetical demonstration only
contributes input locations, since GP variances never read action labels.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .env import TWO_PI, Task, Trajectory, policy_inputs
from .gp import GpCondition, gaussian_entropy
from .policy import LOGPROB_CLIP, log_probs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CriterionConfig:
    candidate_budget: int = 100
    logprob_clip: tuple[float, float] = LOGPROB_CLIP
    max_eval_tasks: int = 12
    max_reference_trajectories: int = 16
    # None means 10 * (n - 1)
    weight_clip_max: float | None = None
    # importance weights below this are treated as zero when scoring
    weight_floor: float = 1e-8
    # divide each score by the candidate's mean weight (self-normalised importance sampling)
    self_normalize: bool = True
    variance_floor: float = 1e-12

    def __post_init__(self):
        if self.candidate_budget < 1:
            raise ValueError("candidate_budget must be >= 1")
        if not self.logprob_clip[0] < self.logprob_clip[1]:
            raise ValueError("logprob_clip low must be below high")
        if self.max_eval_tasks < 1 or self.max_reference_trajectories < 1:
            raise ValueError("max_eval_tasks and max_reference_trajectories must be >= 1")
        if self.weight_clip_max is not None and not self.weight_clip_max > 0:
            raise ValueError("weight_clip_max must be positive")


class StrategyKind(str, enum.Enum):
    AMF = "amf"
    UNIFORM = "uniform"
    REBALANCING = "rebalancing"
    PRIOR_ENTROPY = "prior_entropy"


@dataclass(frozen=True)
class SelectionStrategy:
    kind: StrategyKind = StrategyKind.AMF
    # privileged per-evaluation-task pre-training counts; rebalancing only
    pretrain_counts: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if any(c < 0 for c in self.pretrain_counts):
            raise ValueError("pre-training counts must be non-negative")


def _clip_max(cfg: CriterionConfig, num_past: int) -> float:
    return cfg.weight_clip_max if cfg.weight_clip_max is not None else 10.0 * num_past


def trajectory_log_likelihoods(policy, trajectories: list[Trajectory], tasks: list[Task], clip=LOGPROB_CLIP) -> np.ndarray:
    """Matrix ``[j, k]`` of summed clipped per-step log-probs of trajectory j under task k."""
    if not trajectories or not tasks:
        return np.zeros((len(trajectories), len(tasks)))
    horizon = trajectories[0].horizon
    states = np.vstack([t.states for t in trajectories])
    actions = np.vstack([t.actions for t in trajectories])
    nt = len(tasks)
    enc = np.array([c.encoding for c in tasks])
    # rows ordered (task, trajectory, step)
    inputs = np.hstack([np.tile(states, (nt, 1)), np.repeat(enc, states.shape[0], axis=0)])
    lp = log_probs(policy, np.tile(actions, (nt, 1)), inputs, clip)
    return lp.reshape(nt, len(trajectories), horizon).sum(axis=2).T


def importance_weights_from_loglik(ll_query: np.ndarray, ll_past: np.ndarray, clip_max: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``(n-1) prod pi(.|c) / sum_i prod pi(.|c_i)``, evaluated with a max shift.

    ``ll_query`` is (trajectories, queries); ``ll_past`` is (trajectories, n-1).
    Returns the weights and a mask of clipped entries. When every past task
    scores like the query the weight is exactly 1.
    """
    num_past = ll_past.shape[1]
    if num_past < 1:
        raise ValueError("importance weights need at least one past task")
    shift = np.max(ll_past, axis=1, keepdims=True)
    den = np.sum(np.exp(ll_past - shift), axis=1, keepdims=True)
    w = num_past * np.exp(ll_query - shift) / den
    clipped = np.zeros(w.shape, dtype=bool) if clip_max is None else w > clip_max
    if clip_max is not None:
        w = np.minimum(w, clip_max)
    return w, clipped


def importance_weight(
    tau: Trajectory,
    c: Task,
    past_tasks: list[Task],
    policy,
    cfg: CriterionConfig | None = None,
) -> float:
    cfg = cfg or CriterionConfig()
    if not past_tasks:
        raise ValueError("importance weights need at least one past task")
    ll = trajectory_log_likelihoods(policy, [tau], [c, *past_tasks], cfg.logprob_clip)
    w, clipped = importance_weights_from_loglik(ll[:, :1], ll[:, 1:], _clip_max(cfg, len(past_tasks)))
    if clipped[0, 0]:
        log.debug("importance weight clipped at %.3g", _clip_max(cfg, len(past_tasks)))
    return float(w[0, 0])


@dataclass
class ScoringContext:
    """Read-only snapshot the criterion is evaluated on.

    ``condition`` holds the locations the policy covariance is conditioned on;
    ``references`` are the collected demonstrations used for occupancy
    estimation and ``past_tasks`` the tasks of all collected demonstrations.
    """

    policy: object
    condition: GpCondition
    references: list[Trajectory]
    past_tasks: list[Task]
    eval_tasks: list[Task]
    eval_weights: np.ndarray | None = None
    cfg: CriterionConfig = field(default_factory=CriterionConfig)
    action_dim: int = 2

    def __post_init__(self):
        if not self.past_tasks:
            raise ValueError("criterion needs at least one collected demonstration (warm start)")
        if self.eval_weights is None:
            self.eval_weights = np.full(len(self.eval_tasks), 1.0 / len(self.eval_tasks))
        if len(self.eval_tasks) > self.cfg.max_eval_tasks:
            # evenly strided subset, reweighted to keep unit mass
            keep = np.linspace(0, len(self.eval_tasks), self.cfg.max_eval_tasks, endpoint=False).astype(int)
            self.eval_tasks = [self.eval_tasks[i] for i in keep]
            sub = np.asarray(self.eval_weights, dtype=float)[keep]
            self.eval_weights = sub / sub.sum()
        cap =self.cfg.max_reference_trajectories
        self.references = list(self.references[-cap:])
        self._clip = _clip_max(self.cfg, len(self.past_tasks))
        self._ll_past = trajectory_log_likelihoods(
            self.policy, self.references, self.past_tasks, self.cfg.logprob_clip
        )
        self.eval_w, _ = self.weights(self.eval_tasks)

    @property
    def horizon(self) -> int:
        return self.references[0].horizon

    def weights(self, tasks: list[Task]) -> tuple[np.ndarray, np.ndarray]:
        """Importance weights ``[j, k]`` of reference j under task k, plus clip mask."""
        ll = trajectory_log_likelihoods(self.policy, self.references, tasks, self.cfg.logprob_clip)
        w, clipped = importance_weights_from_loglik(ll, self._ll_past, self._clip)
        if clipped.any():
            log.debug("clipped %d of %d importance weights", clipped.sum(), clipped.size)
        return w, clipped

    def occupancy_queries(self) -> tuple[np.ndarray, np.ndarray]:
        """Evaluation query points with per-point mass ``mu_c(c) w(tau, c) / m``.

        Pairs whose weight falls below the floor are dropped.
        """
        m = len(self.references)
        pts, mass = [], []
        for k, c in enumerate(self.eval_tasks):
            for j, tau in enumerate(self.references):
                w = self.eval_w[j, k]
                if w <= self.cfg.weight_floor:
                    continue
                pts.append(tau.inputs(c))
                mass.append(np.full(tau.horizon, self.eval_weights[k] * w / m))
        if not pts:
            return np.zeros((0, 4)), np.zeros(0)
        return np.vstack(pts), np.concatenate(mass)


def hypothetical_variances(cond: GpCondition, queries: np.ndarray, blocks: np.ndarray, noise_variance: float) -> np.ndarray:
    """Posterior variances at ``queries`` after additionally conditioning on each block.

    ``blocks`` has shape (P, h, d): P independent hypothetical sets of h locations.
    Returns (P, Q). Equivalent to rebuilding the condition on X plus each block.
    """
    num_blocks, h, d = blocks.shape
    flat = blocks.reshape(num_blocks * h, d)
    vq = cond.project(queries)
    vz = cond.project(flat)
    base = cond.kernel.diag(queries) - np.sum(vq * vq, axis=0)
    kern = cond.kernel
    cross = kern.gram(flat, queries) - vz.T @ vq
    cross = cross.reshape(num_blocks, h, -1)
    vz_b = vz.reshape(-1, num_blocks, h)
    zz = np.einsum("npi,npj->pij", vz_b, vz_b)
    kzz = np.stack([kern.gram(b, b) for b in blocks])
    s = kzz - zz
    s[:, np.arange(h), np.arange(h)] += noise_variance + cond.jitter
    chol = np.linalg.cholesky(s)
    solved = np.linalg.solve(chol, cross)
    return base[None, :] - np.sum(solved * solved, axis=1)


def amf_scores(ctx: ScoringContext, candidates: list[Task]) -> np.ndarray:
    """Criterion value per candidate; lower is better."""
    cfg = ctx.cfg
    m = len(ctx.references)
    queries, mass = ctx.occupancy_queries()
    w_cand, _ = ctx.weights(candidates)
    scores = np.zeros(len(candidates))
    if queries.shape[0] == 0:
        return scores
    pairs = [(k, j) for k in range(len(candidates)) for j in range(m) if w_cand[j, k] > cfg.weight_floor]
    if not pairs:
        return scores
    blocks = np.stack([ctx.references[j].inputs(candidates[k]) for k, j in pairs])
    noise = ctx.condition.noise_variance
    # chunk the block batch to bound the (P, h, Q) intermediate
    chunk = max(1, int(4e6 // max(1, queries.shape[0] * ctx.horizon)))
    totals = np.empty(len(pairs))
    for lo in range(0, len(pairs), chunk):
        var = hypothetical_variances(ctx.condition, queries, blocks[lo:lo + chunk], noise)
        ent = gaussian_entropy(np.maximum(var, cfg.variance_floor), ctx.action_dim)
        totals[lo:lo + chunk] = ent @ mass
    cand_idx = np.array([k for k, _ in pairs])
    pair_w = np.array([w_cand[j, k] for k, j in pairs])
    np.add.at(scores, cand_idx, pair_w * totals / m)
    if cfg.self_normalize:
        norm = np.zeros(len(candidates))
        np.add.at(norm, cand_idx, pair_w / m)
        scores = np.divide(scores, norm, out=np.zeros_like(scores), where=norm > 0)
    return scores


def amf_score(c_prime: Task, ctx: ScoringContext) -> float:
    return float(amf_scores(ctx, [c_prime])[0])


def prior_entropy_scores(ctx: ScoringContext, candidates: list[Task]) -> np.ndarray:
    """Reweighted entropy of the current posterior along each candidate's estimated occupancy."""
    m = len(ctx.references)
    w_cand, _ = ctx.weights(candidates)
    scores = np.zeros(len(candidates))
    for k, c in enumerate(candidates):
        pts = np.vstack([tau.inputs(c) for tau in ctx.references])
        var = np.maximum(ctx.condition.variances(pts), ctx.cfg.variance_floor)
        ent = gaussian_entropy(var, ctx.action_dim).reshape(m, ctx.horizon).sum(axis=1)
        scores[k] = float(w_cand[:, k] @ ent) / m
    return scores


def candidate_tasks(task_space, cfg: CriterionConfig, rng: np.random.Generator) -> list[Task]:
    """All tasks of a discrete space, or ``candidate_budget`` uniform angles for ``"circle"``."""
    if isinstance(task_space, str):
        if task_space != "circle":
            raise ValueError(f"unknown task space {task_space!r}")
        return [Task(a) for a in rng.uniform(0.0, TWO_PI, size=cfg.candidate_budget)]
    return list(task_space)


def select_index(
    strategy: SelectionStrategy,
    num_candidates: int,
    *,
    scores=None,
    counts=None,
    rng: np.random.Generator | None = None,
) -> int:
    """Index of the chosen candidate.

    AMF takes criterion ``scores`` (argmin), prior entropy takes its scores (argmax),
    rebalancing takes fine-tuning ``counts`` per candidate, uniform draws from ``rng``.
    Ties resolve to the lowest index.
    """
    if num_candidates < 1:
        raise ValueError("no candidates to select from")
    kind = strategy.kind
    if kind is StrategyKind.UNIFORM:
        if rng is None:
            raise ValueError("uniform selection needs an rng")
        return int(rng.integers(num_candidates))
    if kind is StrategyKind.REBALANCING:
        counts = np.zeros(num_candidates) if counts is None else np.asarray(counts, dtype=float)
        pre = np.asarray(strategy.pretrain_counts or np.zeros(num_candidates), dtype=float)
        if pre.shape[0] != num_candidates or counts.shape[0] != num_candidates:
            raise ValueError("rebalancing needs one count per candidate")
        return int(np.argmin(pre + counts))
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != num_candidates:
        raise ValueError(f"{scores.shape[0]} scores for {num_candidates} candidates")
    if kind is StrategyKind.AMF:
        return int(np.argmin(scores))
    return int(np.argmax(scores))


def select_task(strategy: SelectionStrategy, candidates: list[Task], **context) -> Task:
    return candidates[select_index(strategy, len(candidates), **context)]

"""Standalone studies: criterion-vs-return ranking and forgetting under fine-tuning."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .env import DemoDataset, Task
from .policy import fit_gp_policy
from .runner import (
    _CANDIDATES,
    _DEMO,
    _PRETRAIN,
    ExperimentConfig,
    allocation_preset,
    collect,
    evaluate_policy,
    make_learner,
    stream,
)
from .selection import ScoringContext, amf_scores, candidate_tasks

# extra stream tags, disjoint from the runner's
_HALF_TASKS, _PROBE_DEMO = 10, 11


@dataclass
class CriterionStudy:
    seed: int
    candidates: list[Task]
    scores: np.ndarray
    improvements: np.ndarray
    rho: float


def criterion_vs_return(
    cfg: ExperimentConfig, seed: int, num_pretrain: int = 50, num_candidates: int = 100
) -> CriterionStudy:
    """Rank agreement between the criterion and the realised benefit of one demonstration.

    The policy is pre-trained on ``num_pretrain`` demonstrations of tasks drawn
    uniformly from the top half of the circle; those demonstrations also serve
    as the criterion's reference trajectories. Each candidate is then scored,
    and separately the policy is refit with one extra demonstration of that
    candidate to measure the change in mean evaluation return.
    """
    data = DemoDataset()
    for i, angle in enumerate(stream(seed, _HALF_TASKS).uniform(0.0, np.pi, num_pretrain)):
        data.append(collect(cfg, Task(angle), stream(seed, _PRETRAIN, i)))
    policy = fit_gp_policy(data, cfg.kernel, cfg.noise_variance, fixed_std=cfg.likelihood_std)
    crit = dataclasses.replace(
        cfg.criterion, candidate_budget=num_candidates,
        max_reference_trajectories=max(cfg.criterion.max_reference_trajectories, num_pretrain),
    )
    candidates = candidate_tasks("circle", crit, stream(seed, _CANDIDATES))
    ctx = ScoringContext(policy, policy.condition, list(data), data.tasks, cfg.eval_tasks, cfg=crit)
    scores = amf_scores(ctx, candidates)

    def mean_return(p):
        return float(evaluate_policy(lambda x, _t: p.act_many(x), cfg.eval_tasks, 1, cfg.mdp).mean())

    base = mean_return(policy)
    gains = []
    for k, c in enumerate(candidates):
        grown = data.extended(collect(cfg, c, stream(seed, _PROBE_DEMO, k)))
        gains.append(mean_return(fit_gp_policy(grown, cfg.kernel, cfg.noise_variance)) - base)
    gains = np.array(gains)
    rho = float(spearmanr(scores, gains)[0])
    return CriterionStudy(seed, candidates, scores, gains, rho)


@dataclass
class ForgettingStudy:
    seed: int
    adaptive_prior: bool
    before: float
    after: float
    alpha: np.ndarray | None


def forgetting_probe(cfg: ExperimentConfig, seed: int, rounds: int = 20, demonstrated: int = 6) -> ForgettingStudy:
    """Fine-tune a pre-trained policy only on tasks it never saw; track the seen ones.

    Returns the mean return over the pre-trained tasks before and after
    ``rounds`` single-demonstration fine-tuning rounds that cycle through the
    undemonstrated tasks.
    """
    cfg = dataclasses.replace(
        cfg, pretrain_allocation=allocation_preset(demonstrated, cfg.eval_task_count, cfg.eval_task_count)
    )
    learner = make_learner(cfg, seed)
    tasks = cfg.eval_tasks
    seen, unseen = tasks[:demonstrated], tasks[demonstrated:]

    def seen_return():
        return float(evaluate_policy(learner.actions, seen, 1, cfg.mdp).mean())

    before = seen_return()
    for n in range(1, rounds + 1):
        learner.finetune.append(collect(cfg, unseen[(n - 1) % len(unseen)], stream(seed, _DEMO, n)))
        learner.refit()
    alpha = None if learner.prior is None else learner.prior.alpha.copy()
    return ForgettingStudy(seed, cfg.adaptive_prior, before, seen_return(), alpha)

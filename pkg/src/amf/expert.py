"""Scripted demonstrator and its noisy observable version."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ContextualMdpSpec, Task, Trajectory, reset, step


@dataclass(frozen=True)
class NoiseModel:
    std: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"noise std must be non-negative, got {self.std}")


@dataclass(frozen=True)
class ScriptedExpert:
    max_speed: float = 0.25
    goal_radius: float = 1.0

    def __post_init__(self):
        if not self.max_speed > 0:
            raise ValueError(f"max_speed must be positive, got {self.max_speed}")


def expert_action(expert: ScriptedExpert, s, c: Task) -> np.ndarray:
    """Head straight for the goal, capped at ``max_speed``."""
    delta = c.goal(expert.goal_radius) - np.asarray(s, dtype=float)
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return np.zeros_like(delta)
    return delta * (min(expert.max_speed, dist) / dist)


def expert_actions(expert: ScriptedExpert, states: np.ndarray, c: Task) -> np.ndarray:
    delta = c.goal(expert.goal_radius) - np.atleast_2d(states)
    dist = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.divide(np.minimum(expert.max_speed, dist), dist, out=np.zeros_like(dist), where=dist > 0)
    return delta * scale


def demonstrate(
    expert: ScriptedExpert,
    noise: NoiseModel,
    c: Task,
    horizon: int,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Roll out the noisy expert; the noisy action is both executed and recorded.

    ``rng`` defaults to a generator seeded from ``noise.rng_seed``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if rng is None:
        rng = np.random.default_rng(noise.rng_seed)
    s = reset(ContextualMdpSpec())
    states, actions = [], []
    for _ in range(horizon):
        a = expert_action(expert, s, c)
        if noise.std > 0:
            a = a + rng.normal(0.0, noise.std, size=a.shape)
        states.append(s)
        actions.append(a)
        s = step(s, a)
    return Trajectory(c, np.array(states), np.array(actions), s)

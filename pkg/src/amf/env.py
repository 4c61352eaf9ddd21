"""Contextual 2D integrator: a pointmass at the origin steering its velocity to a goal on a circle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ContextualMdpSpec:
    state_dim: int = 2
    action_dim: int = 2
    task_encoding_dim: int = 2
    horizon: int = 5
    discount: float = 0.99
    goal_radius: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if not self.goal_radius > 0:
            raise ValueError(f"goal_radius must be positive, got {self.goal_radius}")


@dataclass(frozen=True)
class Task:
    """A goal direction; ``encoding`` is the unit vector used as the task input."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % TWO_PI)

    @property
    def encoding(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    def goal(self, radius: float) -> np.ndarray:
        return radius * self.encoding


@dataclass(frozen=True, eq=False)
class Trajectory:
    """H visited states, the H actions taken from them, and the state after the last action."""

    task: Task
    states: np.ndarray
    actions: np.ndarray
    final_state: np.ndarray | None = None

    def __post_init__(self):
        if self.states.shape[0] != self.actions.shape[0]:
            raise ValueError(
                f"{self.states.shape[0]} states but {self.actions.shape[0]} actions"
            )

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def inputs(self, task: Task | None = None) -> np.ndarray:
        """(state, task-encoding) rows; ``task`` overrides the label for hypothetical pairing."""
        return policy_inputs(self.states, task or self.task)


def policy_inputs(states: np.ndarray, task: Task) -> np.ndarray:
    states = np.atleast_2d(states)
    enc = np.broadcast_to(task.encoding, (states.shape[0], 2))
    return np.hstack([states, enc])


def reset(spec: ContextualMdpSpec | None = None) -> np.ndarray:
    return np.zeros((spec or ContextualMdpSpec()).state_dim)


def step(s, a) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise ValueError("state and action must be finite")
    return s + a


def reward(s, c: Task, radius: float = 1.0) -> float:
    return -float(np.linalg.norm(np.asarray(s, dtype=float) - c.goal(radius)))


def discounted_return(states: np.ndarray, c: Task, spec: ContextualMdpSpec) -> float:
    """Sum over the H recorded states of gamma^t * R(s_t, c)."""
    goal = c.goal(spec.goal_radius)
    dist = np.linalg.norm(np.atleast_2d(states) - goal, axis=1)
    return -float(np.sum(spec.discount ** np.arange(dist.shape[0]) * dist))


def evaluation_task_set(count: int = 12) -> list[Task]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return [Task(TWO_PI * k / count) for k in range(count)]


def evaluation_weights(count: int = 12) -> np.ndarray:
    return np.full(count, 1.0 / count)


def nearest_task_index(c: Task, tasks: list[Task]) -> int:
    """Index of the task closest in angle (wrap-aware); ties resolve to the lower index."""
    gaps = [abs((c.angle - t.angle + math.pi) % TWO_PI - math.pi) for t in tasks]
    return int(np.argmin(gaps))


@dataclass
class DemoDataset:
    """Ordered task-labelled demonstrations."""

    trajectories: list[Trajectory] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def append(self, trajectory: Trajectory) -> None:
        if self.trajectories and trajectory.horizon != self.trajectories[0].horizon:
            raise ValueError(
                f"horizon {trajectory.horizon} differs from dataset horizon "
                f"{self.trajectories[0].horizon}"
            )
        self.trajectories.append(trajectory)

    def extended(self, *trajectories: Trajectory) -> DemoDataset:
        out = DemoDataset(list(self.trajectories))
        for t in trajectories:
            out.append(t)
        return out

    @property
    def tasks(self) -> list[Task]:
        return [t.task for t in self.trajectories]

    def inputs(self) -> np.ndarray:
        if not self.trajectories:
            return np.zeros((0, 4))
        return np.vstack([t.inputs() for t in self.trajectories])

    def targets(self) -> np.ndarray:
        if not self.trajectories:
            return np.zeros((0, 2))
        return np.vstack([t.actions for t in self.trajectories])

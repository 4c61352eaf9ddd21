"""Active multi-task fine-tuning of imitation policies on a 2D integrator."""

from .env import DemoDataset, Task, Trajectory, evaluation_task_set
from .gp import GpCondition, RbfKernel, gaussian_entropy
from .runner import ExperimentConfig, RunResult, run_experiment
from .selection import CriterionConfig, SelectionStrategy, StrategyKind

__version__ = "0.1.0"

__all__ = [
    "CriterionConfig",
    "DemoDataset",
    "ExperimentConfig",
    "GpCondition",
    "RbfKernel",
    "RunResult",
    "SelectionStrategy",
    "StrategyKind",
    "Task",
    "Trajectory",
    "evaluation_task_set",
    "gaussian_entropy",
    "run_experiment",
]

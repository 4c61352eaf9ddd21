"""Gaussian-process primitives: RBF kernel, Cholesky-cached conditioning, entropy.

Every output dimension is modelled as an independent GP sharing one kernel and
one conditioning set, so variances are scalars per input point and means carry
one column per output dimension. The prior mean is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

DEFAULT_JITTER = 1e-9


class NumericalError(ArithmeticError):
    """Raised when a kernel system cannot be factorised."""


class Kernel(Protocol):
    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray: ...

    def diag(self, a: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class RbfKernel:
    lengthscale: float = 1.0
    signal_variance: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * a @ b.T
        )
        np.maximum(sq, 0.0, out=sq)
        return self.signal_variance * np.exp(-0.5 * sq / self.lengthscale**2)

    def diag(self, a: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(a).shape[0], self.signal_variance)


def rbf_kernel(x, x_prime, params: RbfKernel) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x_prime.shape[0]}")
    sq = float(np.sum((x - x_prime) ** 2))
    return params.signal_variance * math.exp(-sq / (2.0 * params.lengthscale**2))


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"variance must be non-negative, got {self.variance}")


@dataclass(frozen=True, eq=False)
class GpCondition:
    """Immutable conditioning snapshot.

    ``cholesky`` is the lower factor of ``k(X, X) + (noise_variance + jitter) I``.
    ``targets`` may be ``None``: variances never read them.
    """

    kernel: Kernel
    inputs: np.ndarray
    noise_variance: float
    cholesky: np.ndarray
    targets: np.ndarray | None = None
    jitter: float = DEFAULT_JITTER
    _weights: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        kernel: Kernel,
        inputs,
        targets=None,
        noise_variance: float = 0.0,
        jitter: float = DEFAULT_JITTER,
        input_dim: int | None = None,
    ) -> GpCondition:
        if noise_variance < 0:
            raise ValueError(f"noise_variance must be non-negative, got {noise_variance}")
        inputs = np.asarray(inputs, dtype=float)
        if inputs.size == 0:
            inputs = np.zeros((0, input_dim or (inputs.shape[-1] if inputs.ndim == 2 else 0)))
        inputs = np.atleast_2d(inputs)
        n = inputs.shape[0]
        if targets is not None:
            targets = np.asarray(targets, dtype=float)
            if targets.ndim == 1:
                targets = targets[:, None]
            if targets.shape[0] != n:
                raise ValueError(f"{targets.shape[0]} targets for {n} inputs")
        gram = kernel.gram(inputs, inputs) if n else np.zeros((0, 0))
        gram[np.diag_indices(n)] += noise_variance + jitter
        try:
            chol = np.linalg.cholesky(gram) if n else gram
        except np.linalg.LinAlgError as err:
            raise NumericalError(
                f"Cholesky failed on a {n}x{n} kernel system "
                f"(noise_variance={noise_variance}, jitter={jitter}); "
                "duplicated inputs need a positive noise variance or jitter"
            ) from err
        if n and not np.all(np.isfinite(chol)):
            raise NumericalError(f"non-finite Cholesky factor for {n} conditioning points")
        weights = None
        if targets is not None:
            weights = cho_solve((chol, True), targets) if n else np.zeros_like(targets)
        return cls(kernel, inputs, noise_variance, chol, targets, jitter, weights)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def project(self, points: np.ndarray) -> np.ndarray:
        """Return ``L^-1 k(X, points)``, shape (n, m)."""
        points = np.atleast_2d(points)
        if len(self) == 0:
            return np.zeros((0, points.shape[0]))
        cross = self.kernel.gram(self.inputs, points)
        return solve_triangular(self.cholesky, cross, lower=True, check_finite=False)

    def variances(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.project(points)
        return self.kernel.diag(points) - np.sum(v * v, axis=0)

    def means(self, points) -> np.ndarray:
        if self.targets is None:
            raise ValueError("conditioning set carries no targets")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(self) == 0:
            return np.zeros((points.shape[0], self.targets.shape[1]))
        return self.kernel.gram(points, self.inputs) @ self._weights

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        return self.means(points), self.variances(points)

    def cross_covariance(self, a, b) -> np.ndarray:
        """Posterior covariance between two point sets."""
        return self.kernel.gram(a, b) - self.project(a).T @ self.project(b)


def posterior_predict(cond: GpCondition, x_star) -> GaussianBelief:
    x_star = np.asarray(x_star, dtype=float).reshape(1, -1)
    mean, var = cond.predict(x_star)
    return GaussianBelief(mean[0], max(float(var[0]), 0.0))


def conditional_variance(cond: GpCondition, x_star) -> float:
    """Posterior variance at ``x_star``; depends only on input locations."""
    x_star = np.asarray(x_star, dtype=float).reshape(1, -1)
    return float(cond.variances(x_star)[0])


def gaussian_entropy(variance, output_dims: int = 1):
    """Differential entropy of ``output_dims`` independent Gaussians of equal variance.

    Accepts scalars or arrays.
    """
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise ValueError("entropy requires strictly positive variance")
    if output_dims < 1:
        raise ValueError(f"output_dims must be positive, got {output_dims}")
    h = output_dims * (0.5 * np.log(2.0 * np.pi * variance) + 0.5)
    return float(h) if h.ndim == 0 else h

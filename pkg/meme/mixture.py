"""Diagonal-covariance Gaussian mixtures and their EM estimation."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from .const import (
    DEFAULT_MAX_ITER,
    DEFAULT_SEED,
    DEFAULT_TOLERANCE,
    VARIANCE_FLOOR,
    WEIGHT_SUM_TOLERANCE,
)
from .exceptions import DimensionMismatchError, InsufficientDataError

_LOGGER = logging.getLogger(__name__)

_LOG_TWO_PI = math.log(2.0 * math.pi)
# Added to responsibilities so an emptied component keeps a positive weight.
_RESPONSIBILITY_EPS = 10.0 * np.finfo(np.float64).eps


@dataclass(frozen=True, slots=True)
class GaussianComponent:
    """One weighted Gaussian with diagonal covariance."""

    weight: float
    mean: tuple[float, ...]
    variance: tuple[float, ...]


@dataclass(frozen=True, slots=True, eq=False)
class GaussianMixture:
    """K weighted diagonal Gaussians over vectors of length dim.

    Parameters are held as arrays: weights (K,), means (K, dim) and
    variances (K, dim). Instances are read-only.
    """

    weights: NDArray[np.float64]
    means: NDArray[np.float64]
    variances: NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate shapes, weights and variances."""
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        means = np.array(self.means, dtype=np.float64)
        variances = np.array(self.variances, dtype=np.float64)
        if means.ndim == 1:
            means = means.reshape(-1, 1)
        if variances.ndim == 1:
            variances = variances.reshape(-1, 1)
        n_components = weights.shape[0]
        if n_components < 1:
            raise ValueError("a mixture needs at least one component")
        if means.shape[0] != n_components or variances.shape != means.shape:
            raise DimensionMismatchError(
                f"weights {weights.shape}, means {means.shape} and variances "
                f"{variances.shape} do not describe the same components"
            )
        if np.any(weights <= 0) or np.any(weights > 1):
            raise ValueError(f"weights must lie in (0, 1], got {weights}")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        if not np.all(variances > 0):
            raise ValueError("variances must be strictly positive")
        for name, array in (
            ("weights", weights),
            ("means", means),
            ("variances", variances),
        ):
            array.flags.writeable = False
            object.__setattr__(self, name, array)

    @classmethod
    def from_components(
        cls, components: Sequence[GaussianComponent]
    ) -> GaussianMixture:
        """Build a mixture from component records."""
        return cls(
            np.array([component.weight for component in components]),
            np.array([component.mean for component in components]),
            np.array([component.variance for component in components]),
        )

    @property
    def n_components(self) -> int:
        """Return K."""
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        """Return the feature dimension."""
        return int(self.means.shape[1])

    @property
    def components(self) -> tuple[GaussianComponent, ...]:
        """Return the components as records."""
        return tuple(
            GaussianComponent(
                float(self.weights[index]),
                tuple(float(value) for value in self.means[index]),
                tuple(float(value) for value in self.variances[index]),
            )
            for index in range(self.n_components)
        )

    @property
    def parameter_count(self) -> int:
        """Return the number of free scalars (weight, means, variances)."""
        return self.n_components * (1 + 2 * self.dim)

    def same_parameters(self, other: GaussianMixture) -> bool:
        """Return True when both mixtures hold identical parameters."""
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )


@dataclass(frozen=True, slots=True)
class EmFit:
    """Result of an EM run with its per-iteration trace."""

    mixture: GaussianMixture
    log_likelihoods: tuple[float, ...]
    n_iter: int
    converged: bool


def _as_batch(mixture: GaussianMixture, x: ArrayLike) -> NDArray[np.float64]:
    """Return x as an (N, dim) float array, checking the dimension."""
    batch = np.asarray(x, dtype=np.float64)
    if batch.ndim == 0:
        batch = batch.reshape(1, 1)
    elif batch.ndim == 1:
        batch = batch.reshape(1, -1) if mixture.dim > 1 else batch.reshape(-1, 1)
    if batch.ndim != 2 or batch.shape[1] != mixture.dim:
        raise DimensionMismatchError(
            f"feature dimension {batch.shape[-1]} does not match "
            f"mixture dimension {mixture.dim}"
        )
    return batch


def weighted_log_components(
    mixture: GaussianMixture, batch: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Return log(pi_i) + log N(x; mu_i, Sigma_i) as an (N, K) array."""
    precision = 1.0 / mixture.variances
    quadratic = (
        (batch * batch) @ precision.T
        - 2.0 * batch @ (mixture.means * precision).T
        + np.sum(mixture.means * mixture.means * precision, axis=1)
    )
    log_norm = -0.5 * (
        mixture.dim * _LOG_TWO_PI + np.sum(np.log(mixture.variances), axis=1)
    )
    return np.log(mixture.weights) + log_norm - 0.5 * np.maximum(quadratic, 0.0)


def log_density(mixture: GaussianMixture, x: ArrayLike) -> NDArray[np.float64]:
    """Return log P(x) for a batch of shape (N, dim)."""
    return logsumexp(weighted_log_components(mixture, _as_batch(mixture, x)), axis=1)


def density(mixture: GaussianMixture, x: ArrayLike) -> float:
    """Return the mixture density at one feature vector."""
    vector = np.asarray(x, dtype=np.float64).reshape(-1)
    if vector.shape[0] != mixture.dim:
        raise DimensionMismatchError(
            f"feature dimension {vector.shape[0]} does not match "
            f"mixture dimension {mixture.dim}"
        )
    return float(np.exp(log_density(mixture, vector.reshape(1, -1))[0]))


def _kmeans_plus_plus(
    samples: NDArray[np.float64], n_components: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Pick initial means by D^2-weighted seeding."""
    n_samples = samples.shape[0]
    centers = [samples[rng.integers(n_samples)]]
    nearest = np.sum((samples - centers[0]) ** 2, axis=1)
    for _ in range(1, n_components):
        total = nearest.sum()
        if total > 0:
            index = rng.choice(n_samples, p=nearest / total)
        else:
            index = rng.integers(n_samples)
        centers.append(samples[index])
        nearest = np.minimum(nearest, np.sum((samples - samples[index]) ** 2, axis=1))
    return np.array(centers)


def _as_samples(samples: ArrayLike) -> NDArray[np.float64]:
    """Return samples as an (N, dim) array; scalars become 1-D features."""
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if data.ndim != 2:
        raise DimensionMismatchError(
            f"samples must be a list of feature vectors, got shape {data.shape}"
        )
    if data.shape[0] == 0:
        raise InsufficientDataError("cannot fit a mixture to zero samples")
    return data


def fit_em_traced(
    samples: ArrayLike,
    n_components: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOLERANCE,
    seed: int | np.random.SeedSequence = DEFAULT_SEED,
    variance_floor: float = VARIANCE_FLOOR,
) -> EmFit:
    """Fit a K-component mixture by EM and keep the log-likelihood trace.

    The trace holds the mean per-sample log-likelihood of the initial
    parameters followed by one entry per M-step. Iteration stops after
    max_iter M-steps or once an M-step improves the mean by less than tol.
    Variances are clamped at variance_floor inside the M-step.
    """
    data = _as_samples(samples)
    n_samples, dim = data.shape
    if n_components < 1:
        raise ValueError(f"component count must be >= 1, got {n_components}")
    if n_samples < n_components:
        raise InsufficientDataError(
            f"{n_samples} samples cannot support {n_components} components"
        )

    rng = np.random.default_rng(seed)
    means = _kmeans_plus_plus(data, n_components, rng)
    variances = np.tile(np.maximum(data.var(axis=0), variance_floor), (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)
    mixture = GaussianMixture(weights, means, variances)

    weighted = weighted_log_components(mixture, data)
    per_sample = logsumexp(weighted, axis=1)
    trace = [float(per_sample.mean())]
    converged = False
    n_iter = 0

    while n_iter < max_iter:
        responsibilities = np.exp(weighted - per_sample[:, None])
        totals = responsibilities.sum(axis=0) + _RESPONSIBILITY_EPS
        weights = totals / totals.sum()
        means = (responsibilities.T @ data) / totals[:, None]
        variances = np.empty_like(means)
        for index in range(n_components):
            centered = data - means[index]
            variances[index] = (
                responsibilities[:, index] @ (centered * centered) / totals[index]
            )
        mixture = GaussianMixture(
            weights, means, np.maximum(variances, variance_floor)
        )
        n_iter += 1

        weighted = weighted_log_components(mixture, data)
        per_sample = logsumexp(weighted, axis=1)
        trace.append(float(per_sample.mean()))
        if trace[-1] - trace[-2] < tol:
            converged = True
            break

    _LOGGER.debug(
        "EM finished components=%d samples=%d dim=%d iterations=%d "
        "mean_log_likelihood=%.6f converged=%s",
        n_components,
        n_samples,
        dim,
        n_iter,
        trace[-1],
        converged,
    )
    return EmFit(mixture, tuple(trace), n_iter, converged)


def fit_em(
    samples: ArrayLike,
    n_components: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOLERANCE,
    seed: int | np.random.SeedSequence = DEFAULT_SEED,
    variance_floor: float = VARIANCE_FLOOR,
) -> GaussianMixture:
    """Fit a K-component mixture by EM."""
    return fit_em_traced(
        samples, n_components, max_iter, tol, seed, variance_floor
    ).mixture

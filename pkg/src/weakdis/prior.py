"""Adaptive Gaussian-mixture latent prior.

N diagonal components with equal weights 1/N, estimated empirically from
labeled latent codes. Supports density queries, responsibility-based
classification with rejection, per-component sampling, and the uniform
warmup prior used before the mixture is first estimated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GMPrior",
    "ClassificationResult",
    "estimate_prior",
    "log_component_densities",
    "mixture_log_density",
    "responsibilities",
    "classify",
    "classify_batch",
    "sample_component",
    "sample_mixture",
    "warmup_sample",
]

DEFAULT_VARIANCE_FLOOR = 1e-4


@dataclass(frozen=True)
class GMPrior:
    means: np.ndarray       # N x n_z
    variances: np.ndarray   # N x n_z, >= variance_floor
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if self.means.shape != self.variances.shape:
            raise ValueError("means and variances must have identical shapes")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("non-finite component means")
        if np.any(self.variances < self.variance_floor * (1 - 1e-12)):
            raise ValueError("variances below the floor")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_z(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class ClassificationResult:
    accepted: bool
    component: int | None
    responsibility: float


def estimate_prior(
    codes_by_combination, variance_floor: float = DEFAULT_VARIANCE_FLOOR
) -> GMPrior:
    """Per-component sample mean and variance (divisor max(n-1, 1)), floored."""
    means, variances = [], []
    for i, codes in enumerate(codes_by_combination):
        codes = np.asarray(codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] == 0:
            raise ValueError(f"component {i} has no codes")
        if not np.all(np.isfinite(codes)):
            raise ValueError(f"component {i} has non-finite codes")
        means.append(codes.mean(axis=0))
        ddof = 1 if codes.shape[0] > 1 else 0
        variances.append(np.maximum(codes.var(axis=0, ddof=ddof), variance_floor))
    return GMPrior(np.stack(means), np.stack(variances), variance_floor)


def _log_densities(prior: GMPrior, z: np.ndarray) -> np.ndarray:
    # z: M x n_z -> M x N per-component log densities
    diff = z[:, None, :] - prior.means[None, :, :]
    quad = np.sum(diff**2 / prior.variances[None, :, :], axis=-1)
    log_norm = np.sum(np.log(2.0 * np.pi * prior.variances), axis=-1)
    return -0.5 * (quad + log_norm[None, :])


def log_component_densities(prior: GMPrior, z: np.ndarray) -> np.ndarray:
    """Exact diagonal-Gaussian log densities of z under each component."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[-1] != prior.n_z:
        raise ValueError(f"expected codes of dimension {prior.n_z}")
    out = _log_densities(prior, z)
    return out[0] if out.shape[0] == 1 else out


def mixture_log_density(prior: GMPrior, z: np.ndarray) -> float | np.ndarray:
    """log p(z) = logsumexp(component log densities) - log N."""
    dens = np.atleast_2d(log_component_densities(prior, z))
    out = logsumexp(dens, axis=-1) - np.log(prior.n_components)
    return float(out[0]) if out.shape[0] == 1 else out


def responsibilities(prior: GMPrior, z: np.ndarray) -> np.ndarray:
    """Posterior component probabilities (equal weights), log-space stabilized."""
    dens = np.atleast_2d(log_component_densities(prior, z))
    r = np.exp(dens - logsumexp(dens, axis=-1, keepdims=True))
    return r[0] if r.shape[0] == 1 else r


def classify(prior: GMPrior, z: np.ndarray, alpha: float) -> ClassificationResult:
    """Argmax-responsibility classification with alpha-threshold rejection."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    r = np.atleast_2d(responsibilities(prior, z))[0]
    best = int(np.argmax(r))
    accepted = bool(r[best] >= alpha)
    return ClassificationResult(accepted, best if accepted else None, float(r[best]))


def classify_batch(prior: GMPrior, z: np.ndarray, alpha: float):
    """Vectorized classify: (components, max responsibilities, accepted mask)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    r = np.atleast_2d(responsibilities(prior, z))
    comps = np.argmax(r, axis=-1)
    best = r[np.arange(len(r)), comps]
    return comps, best, best >= alpha


def sample_component(prior: GMPrior, i: int, n: int, seed_or_rng) -> np.ndarray:
    """n seeded draws from component i."""
    if not 0 <= i < prior.n_components:
        raise IndexError(f"component index {i} out of range [0, {prior.n_components})")
    rng = np.random.default_rng(seed_or_rng) if not isinstance(
        seed_or_rng, np.random.Generator
    ) else seed_or_rng
    std = np.sqrt(prior.variances[i])
    return prior.means[i] + rng.standard_normal((n, prior.n_z)) * std


def sample_mixture(prior: GMPrior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Equal-weight mixture draws: uniform component choice, then Gaussian."""
    comps = rng.integers(0, prior.n_components, size=n)
    std = np.sqrt(prior.variances[comps])
    return prior.means[comps] + rng.standard_normal((n, prior.n_z)) * std


def warmup_sample(n: int, n_z: int, seed_or_rng) -> np.ndarray:
    """i.i.d. Uniform(-1, 1) draws used as the prior during warmup."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed_or_rng) if not isinstance(
        seed_or_rng, np.random.Generator
    ) else seed_or_rng
    return rng.uniform(-1.0, 1.0, size=(n, n_z))

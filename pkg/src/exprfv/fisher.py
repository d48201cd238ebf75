"""Fisher Vector encoding of frame sequences against a GaussianMixture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ExpressionSequence
from .gmm import GaussianMixture, posterior_matrix, sparsify_posteriors

DEFAULT_POSTERIOR_THRESHOLD = 1e-4


@dataclass(frozen=True)
class SufficientStats:
    """Zeroth, first and second order posterior-weighted sums over T frames."""

    S0: np.ndarray  # (K,)
    S1: np.ndarray  # (K, N)
    S2: np.ndarray  # (K, N)
    T: int

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(self.S0 + other.S0, self.S1 + other.S1,
                               self.S2 + other.S2, self.T + other.T)


@dataclass(frozen=True)
class FisherVector:
    """Stacked gradient blocks: K weight terms, then K*N mean terms, then K*N sigma terms."""

    values: np.ndarray
    K: int
    N: int
    normalized: bool

    def __post_init__(self):
        if self.values.shape != (fv_length(self.K, self.N),):
            raise ValueError(f"FV of length {self.values.shape} for K={self.K}, N={self.N}")

    def blocks(self):
        """Split into (w-block (K,), mu-block (K, N), sigma-block (K, N))."""
        K, N = self.K, self.N
        v = self.values
        return v[:K], v[K:K + K * N].reshape(K, N), v[K + K * N:].reshape(K, N)


def fv_length(K: int, N: int) -> int:
    return K * (2 * N + 1)


def _frames(seq):
    if isinstance(seq, ExpressionSequence):
        return seq.frames
    return np.atleast_2d(np.asarray(seq, dtype=np.float64))


def accumulate_stats(seq, gmm: GaussianMixture,
                     sparsify_threshold: float = DEFAULT_POSTERIOR_THRESHOLD) -> SufficientStats:
    X = _frames(seq)
    if X.shape[1] != gmm.N:
        raise ValueError(f"sequence has {X.shape[1]} expressions, mixture expects {gmm.N}")
    gamma = posterior_matrix(gmm, X)
    if sparsify_threshold > 0:
        gamma = sparsify_posteriors(gamma, sparsify_threshold)
    return SufficientStats(gamma.sum(axis=0), gamma.T @ X, gamma.T @ (X * X), X.shape[0])


def fv_unnormalized(stats: SufficientStats, gmm: GaussianMixture) -> FisherVector:
    w = gmm.weights
    mu = gmm.means
    var = gmm.variances
    sd = np.sqrt(var)
    sw = np.sqrt(w)[:, None]
    S0 = stats.S0[:, None]
    g_w = (stats.S0 - stats.T * w) / np.sqrt(w)
    g_mu = (stats.S1 - mu * S0) / (sw * sd)
    g_sigma = (stats.S2 - 2.0 * mu * stats.S1 + (mu * mu - var) * S0) / (np.sqrt(2.0 * w)[:, None] * var)
    return FisherVector(np.concatenate([g_w, g_mu.ravel(), g_sigma.ravel()]),
                        gmm.K, gmm.N, normalized=False)


def power_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.sqrt(np.abs(v))


def l2_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.dot(v, v))
    if norm == 0.0:
        return v.copy()
    return v / norm


def normalize_fv(fv: FisherVector) -> FisherVector:
    return FisherVector(l2_normalize(power_normalize(fv.values)), fv.K, fv.N, normalized=True)


def encode(seq, gmm: GaussianMixture,
           sparsify_threshold: float = DEFAULT_POSTERIOR_THRESHOLD,
           normalize: bool = True) -> FisherVector:
    """Fixed-length descriptor of a (normalized) sequence, independent of T."""
    fv = fv_unnormalized(accumulate_stats(seq, gmm, sparsify_threshold), gmm)
    return normalize_fv(fv) if normalize else fv

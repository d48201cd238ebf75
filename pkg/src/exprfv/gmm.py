"""Diagonal-covariance Gaussian mixture: densities, posteriors and EM fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_VARIANCE_FLOOR = 1e-3


@dataclass(frozen=True)
class GaussianMixture:
    """K diagonal Gaussians over R^N.

    Attributes
    ----------
    weights : (K,) array, positive, summing to one
    means : (K, N) array
    variances : (K, N) array, diagonal covariances (sigma squared)
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if mu.ndim != 2 or var.shape != mu.shape or w.shape[0] != mu.shape[0]:
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be positive and sum to 1 (sum={w.sum()!r})")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ValueError("variances must be positive and finite")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def N(self) -> int:
        return self.means.shape[1]

    def _check_dim(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.N:
            raise ValueError(f"expected dimension {self.N}, got {X.shape[-1]}")
        return X


def component_log_density(gmm: GaussianMixture, k: int, x) -> float:
    """log u_k(x) for a single component."""
    if not 0 <= k < gmm.K:
        raise IndexError(f"component {k} out of range for K={gmm.K}")
    x = gmm._check_dim(x).reshape(-1)
    var = gmm.variances[k]
    diff = x - gmm.means[k]
    return float(-0.5 * (gmm.N * LOG_2PI + np.sum(np.log(var)) + np.sum(diff * diff / var)))


def log_densities(means, variances, X):
    """(T, K) matrix of log u_k(x_t) for raw parameter arrays."""
    X = np.atleast_2d(X)
    diff = X[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    const = means.shape[1] * LOG_2PI + np.sum(np.log(variances), axis=1)
    return -0.5 * (quad + const)


def _weighted_log_densities(gmm: GaussianMixture, X):
    return log_densities(gmm.means, gmm.variances, X) + np.log(gmm.weights)


def posterior_matrix(gmm: GaussianMixture, X) -> np.ndarray:
    """(T, K) responsibilities, computed in the log domain."""
    X = gmm._check_dim(np.atleast_2d(X))
    lw = _weighted_log_densities(gmm, X)
    lw -= lw.max(axis=1, keepdims=True)
    p = np.exp(lw)
    p /= p.sum(axis=1, keepdims=True)
    return p


def posteriors(gmm: GaussianMixture, x) -> np.ndarray:
    x = gmm._check_dim(x)
    if x.ndim != 1:
        raise ValueError("posteriors expects a single N-vector; use posterior_matrix for batches")
    return posterior_matrix(gmm, x[None, :])[0]


def sparsify_posteriors(row, threshold: float = 1e-4) -> np.ndarray:
    """Zero entries below ``threshold``; survivors keep their values."""
    row = np.asarray(row, dtype=np.float64)
    return np.where(row < threshold, 0.0, row)


def log_likelihood(gmm: GaussianMixture, data) -> float:
    X = gmm._check_dim(np.atleast_2d(data))
    if X.shape[0] == 0:
        raise ValueError("log_likelihood of empty data")
    return float(np.sum(logsumexp(_weighted_log_densities(gmm, X), axis=1)))


@dataclass
class EMConfig:
    max_iters: int = 300
    tol: float = 1e-6  # per-point log-likelihood improvement
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    seed: int = 0
    subsample: float = 1.0  # fraction of frames kept, chosen uniformly


@dataclass
class EMResult:
    gmm: GaussianMixture
    log_likelihoods: List[float]
    converged: bool
    n_iter: int
    reseeded: List[tuple] = field(default_factory=list)  # (iteration, component)
    floored_last_step: bool = False


def _global_variance(X, floor):
    return np.maximum(X.var(axis=0), floor)


def init_gmm(data, K: int, seed: int = 0,
             variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> GaussianMixture:
    """k-means++ seeding of means, global variances, uniform weights."""
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = X.shape[0]
    if K < 1:
        raise ValueError("K must be at least 1")
    if n < K:
        raise ValueError(f"need at least K={K} data points, got {n}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        mask = np.ones(n, dtype=bool)
        mask[chosen] = False
        p = np.where(mask, d2, 0.0)
        total = p.sum()
        if total > 0:
            idx = int(rng.choice(n, p=p / total))
        else:
            # all remaining points coincide with chosen means
            idx = int(rng.choice(np.flatnonzero(mask)))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    means = X[chosen].copy()
    var = np.tile(_global_variance(X, variance_floor), (K, 1))
    return GaussianMixture(np.full(K, 1.0 / K), means, var)


def _e_step(gmm, X):
    lw = _weighted_log_densities(gmm, X)
    lse = logsumexp(lw, axis=1)
    resp = np.exp(lw - lse[:, None])
    return resp, lse


def _m_step(X, resp, floor):
    S0 = resp.sum(axis=0)
    means = (resp.T @ X) / S0[:, None]
    # two-pass variance is more accurate than S2/S0 - mu^2
    var = np.empty_like(means)
    for k in range(means.shape[0]):
        d = X - means[k]
        var[k] = (resp[:, k] @ (d * d)) / S0[k]
    floored = bool(np.any(var < floor))
    var = np.maximum(var, floor)
    weights = S0 / S0.sum()
    return weights, means, var, floored


def fit_em(data, K: int, config: Optional[EMConfig] = None,
           init: Optional[GaussianMixture] = None) -> EMResult:
    """Maximum-likelihood fit by EM with variance flooring.

    The returned trace holds the log-likelihood of each successive
    parameter set, starting with the initialization.
    """
    config = config or EMConfig()
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if K < 1:
        raise ValueError("K must be at least 1")
    if 0 < config.subsample < 1.0:
        rng = np.random.default_rng(config.seed + 1)
        keep = np.sort(rng.choice(X.shape[0], size=max(K, int(round(config.subsample * X.shape[0]))),
                                  replace=False))
        X = X[keep]
    n = X.shape[0]
    if n < K:
        raise ValueError(f"need at least K={K} data points, got {n}")
    floor = config.variance_floor

    gmm = init if init is not None else init_gmm(X, K, config.seed, floor)
    global_var = _global_variance(X, floor)
    trace: List[float] = []
    reseeded = []
    converged = False
    floored = False
    it = 0
    resp, lse = _e_step(gmm, X)
    trace.append(float(lse.sum()))
    for it in range(1, config.max_iters + 1):
        S0 = resp.sum(axis=0)
        dead = np.flatnonzero(S0 < 1e-8 * n)
        if dead.size:
            weights, means, var = gmm.weights.copy(), gmm.means.copy(), gmm.variances.copy()
            for k in dead:
                worst = int(np.argmin(lse))
                means[k] = X[worst]
                var[k] = global_var
                weights[k] = 1.0 / K
                reseeded.append((it, int(k)))
                logger.debug("EM iteration %d: reseeding component %d at point %d", it, k, worst)
            weights /= weights.sum()
            gmm = GaussianMixture(weights, means, var)
            resp, lse = _e_step(gmm, X)
            trace[-1] = float(lse.sum())
        weights, means, var, floored = _m_step(X, resp, floor)
        gmm = GaussianMixture(weights, means, var)
        resp, lse = _e_step(gmm, X)
        ll = float(lse.sum())
        trace.append(ll)
        if ll - trace[-2] < config.tol * n:
            converged = True
            break
    return EMResult(gmm, trace, converged, it, reseeded, floored)

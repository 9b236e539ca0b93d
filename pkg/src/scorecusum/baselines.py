"""Comparison detectors built on the same CUSUM recursion.

Gaussian CUSUM (MLE fits), GMM(n)-CUSUM (EM fits), exact CUSUM and exact
score CUSUM on known mixtures, the implicit score-matching ablation, and
Hotelling's T^2 as a per-observation chart.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .detector import CusumDetector, ShewhartDetector, score_increment
from .errors import InputError
from .scorenet import ScoreModel, TrainConfig, train_implicit
from .statistics import GmmSpec, as_batch, increment

log = logging.getLogger(__name__)

MLE_RIDGE = 1e-8
EM_RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=float))
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise InputError(f"covariance shape {cov.shape} does not match mean of length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InputError("Gaussian parameters must be finite")
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InputError("covariance is singular or not positive definite") from None
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", L)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self._chol)).sum())

    def mahalanobis_sq(self, X) -> np.ndarray:
        half = solve_triangular(self._chol, (X - self.mean).T, lower=True)
        return np.sum(half**2, axis=0)

    def as_gmm(self) -> GmmSpec:
        return GmmSpec.gaussian(self.mean, self.cov)


def fit_gaussian_mle(data, ridge: float = MLE_RIDGE) -> GaussianParams:
    """Sample mean and biased (1/n) covariance plus ``ridge * I``."""
    X, _ = as_batch(data)
    n, d = X.shape
    if n < d + 1:
        raise InputError(f"need at least {d + 1} points to fit a {d}-dimensional Gaussian, got {n}")
    mean = X.mean(axis=0)
    diff = X - mean
    cov = diff.T @ diff / n + ridge * np.eye(d)
    return GaussianParams(mean, cov)


def gaussian_llr(p0: GaussianParams, p1: GaussianParams, x):
    """log N(x; mu1, S1) - log N(x; mu0, S0)."""
    X, single = as_batch(x, p0.dim)
    val = 0.5 * (p0.logdet() - p1.logdet()) + 0.5 * p0.mahalanobis_sq(X) - 0.5 * p1.mahalanobis_sq(X)
    return float(val[0]) if single else val


# -- EM for Gaussian mixtures ---------------------------------------------


@dataclass
class EmFit:
    spec: GmmSpec
    log_likelihoods: list = field(default_factory=list)
    n_reseeds: int = 0
    converged: bool = False

    @property
    def final_log_likelihood(self) -> float:
        return self.log_likelihoods[-1]


def _kmeans_pp(X, n, rng):
    centers = [X[rng.integers(X.shape[0])]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, n):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(X.shape[0])
        else:
            idx = rng.choice(X.shape[0], p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _log_joint(X, weights, means, covs):
    n, d = X.shape
    out = np.empty((n, len(weights)))
    for k in range(len(weights)):
        L = np.linalg.cholesky(covs[k])
        half = solve_triangular(L, (X - means[k]).T, lower=True)
        out[:, k] = (
            np.log(weights[k]) - 0.5 * d * np.log(2 * np.pi) - np.log(np.diag(L)).sum() - 0.5 * np.sum(half**2, axis=0)
        )
    return out


def run_em(data, n_components: int, iters: int = 200, rng=None, ridge: float = EM_RIDGE, tol: float = 1e-9) -> EmFit:
    """One EM run from a k-means++ start.

    Stops after ``iters`` M-steps or once the log-likelihood gains less than
    ``tol``. A component whose responsibility mass vanishes is re-centred on
    a random data point with the pooled covariance; such events are counted.
    """
    X, _ = as_batch(data)
    n, d = X.shape
    if n_components < 1:
        raise InputError("need at least one component")
    if n < n_components:
        raise InputError(f"need at least {n_components} points, got {n}")
    rng = np.random.default_rng(rng)
    pooled = np.cov(X.T, bias=True).reshape(d, d) + ridge * np.eye(d)
    means = _kmeans_pp(X, n_components, rng)
    covs = np.repeat(pooled[None], n_components, axis=0)
    weights = np.full(n_components, 1.0 / n_components)
    lls: list[float] = []
    reseeds = 0
    converged = False
    for _ in range(iters):
        lj = _log_joint(X, weights, means, covs)
        norm = logsumexp(lj, axis=1)
        ll = float(norm.sum())
        if lls and ll - lls[-1] < tol:
            lls.append(ll)
            converged = True
            break
        lls.append(ll)
        r = np.exp(lj - norm[:, None])
        nk = r.sum(axis=0)
        for k in range(n_components):
            if nk[k] < 1e-8 * n:
                reseeds += 1
                means[k] = X[rng.integers(n)]
                covs[k] = pooled
                nk[k] = 1.0
                continue
            means[k] = r[:, k] @ X / nk[k]
            diff = X - means[k]
            covs[k] = (r[:, k, None] * diff).T @ diff / nk[k] + ridge * np.eye(d)
            covs[k] = 0.5 * (covs[k] + covs[k].T)
        weights = nk / nk.sum()
    else:
        lj = _log_joint(X, weights, means, covs)
        lls.append(float(logsumexp(lj, axis=1).sum()))
    weights = weights / weights.sum()
    if reseeds:
        log.info("EM re-seeded %d empty component(s)", reseeds)
    return EmFit(GmmSpec(weights, means, covs), lls, reseeds, converged)


def em_fit_gmm(data, n_components: int, iters: int = 200, seed=0, restarts: int = 3) -> GmmSpec:
    """Best-of-``restarts`` EM fit (by final log-likelihood)."""
    return em_fit(data, n_components, iters, seed, restarts).spec


def em_fit(data, n_components: int, iters: int = 200, seed=0, restarts: int = 3) -> EmFit:
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    fits = [run_em(data, n_components, iters, np.random.default_rng(s)) for s in seeds]
    return max(fits, key=lambda f: f.final_log_likelihood)


# -- exact and learned increments ------------------------------------------


def exact_cusum_llr(p0: GmmSpec, p1: GmmSpec, x):
    """log p1(x) - log p0(x)."""
    return p1.logpdf(x) - p0.logpdf(x)


def exact_scusum_increment(p0: GmmSpec, p1: GmmSpec, x):
    """Hyvarinen-score increment with the true mixture scores."""
    return increment(p0, p1, x)


def sm_ablation_train(data, cfg: TrainConfig, init: Optional[ScoreModel] = None) -> ScoreModel:
    """Noise-free implicit score matching with the exact network divergence."""
    return train_implicit(data, cfg, init)


def hotelling_reference(data) -> GaussianParams:
    """Reference mean and unbiased covariance (no ridge)."""
    X, _ = as_batch(data)
    n, d = X.shape
    if n < d + 1:
        raise InputError(f"need at least {d + 1} reference points, got {n}")
    return GaussianParams(X.mean(axis=0), np.cov(X.T, ddof=1).reshape(d, d))


def hotelling_t2(reference: GaussianParams, x):
    """(x - mu)^T S^{-1} (x - mu)."""
    X, single = as_batch(x, reference.dim)
    val = reference.mahalanobis_sq(X)
    return float(val[0]) if single else val


# -- adapters ---------------------------------------------------------------


def make_cusum_detector(increment_fn) -> CusumDetector:
    return CusumDetector(increment_fn)


def gaussian_cusum(p0: GaussianParams, p1: GaussianParams) -> CusumDetector:
    return CusumDetector(lambda x: gaussian_llr(p0, p1, x))


def gmm_cusum(p0: GmmSpec, p1: GmmSpec) -> CusumDetector:
    return CusumDetector(lambda x: exact_cusum_llr(p0, p1, x))


exact_cusum = gmm_cusum


def score_cusum(s0, s1) -> CusumDetector:
    return CusumDetector(score_increment(s0, s1))


def hotelling_chart(reference: GaussianParams) -> ShewhartDetector:
    return ShewhartDetector(lambda x: hotelling_t2(reference, x))

"""Hyvarinen scores, CUSUM increments and closed-form Gaussian-mixture oracles.

Every score object here follows the same duck-typed protocol: ``score(x)``
returns the gradient of the log-density and ``divergence(x)`` the trace of
its Jacobian. Both accept a single point of shape ``(d,)`` or a batch of
shape ``(n, d)``; batch input gives batch output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import InputError, NumericError

_LOG_2PI = np.log(2.0 * np.pi)


@runtime_checkable
class ScoreFn(Protocol):
    dim: int

    def score(self, x: np.ndarray) -> np.ndarray: ...

    def divergence(self, x: np.ndarray) -> np.ndarray: ...


def as_batch(x, dim: int | None = None) -> tuple[np.ndarray, bool]:
    """Return ``(X, single)`` where X is a 2-D float array."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"expected a vector or a 2-D batch, got shape {np.shape(x)}")
    if dim is not None and arr.shape[1] != dim:
        raise InputError(f"dimension mismatch: expected {dim}, got {arr.shape[1]}")
    return arr, single


class AnalyticScore:
    """A score given by explicit batch callables ``score(X)`` and ``divergence(X)``."""

    def __init__(self, dim: int, score: Callable, divergence: Callable):
        self.dim = dim
        self._score = score
        self._divergence = divergence

    def score(self, x):
        X, single = as_batch(x, self.dim)
        out = np.asarray(self._score(X), dtype=float).reshape(X.shape)
        return out[0] if single else out

    def divergence(self, x):
        X, single = as_batch(x, self.dim)
        out = np.broadcast_to(np.asarray(self._divergence(X), dtype=float), (X.shape[0],))
        return float(out[0]) if single else np.array(out)


def zero_score(dim: int) -> AnalyticScore:
    return AnalyticScore(dim, lambda X: np.zeros_like(X), lambda X: np.zeros(X.shape[0]))


@dataclass(frozen=True, eq=False)
class GmmSpec:
    """Gaussian mixture with full covariances.

    Doubles as a ScoreFn: ``score`` and ``divergence`` are the exact gradient
    of the log-density and its Laplacian.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chol: list = field(init=False, repr=False)
    _logdet: np.ndarray = field(init=False, repr=False)
    _prec_trace: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        cov = np.array(self.covariances, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None, None]
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise InputError(
                f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, covariances {cov.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError(f"mixture weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise InputError("mixture parameters must be finite")
        chol, logdet, ptr = [], np.empty(k), np.empty(k)
        for i in range(k):
            c = cov[i]
            if not np.allclose(c, c.T, rtol=1e-10, atol=1e-12):
                raise InputError(f"covariance {i} is not symmetric")
            try:
                L = np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise InputError(f"covariance {i} is not positive definite") from None
            chol.append(L)
            logdet[i] = 2.0 * np.log(np.diag(L)).sum()
            Linv = solve_triangular(L, np.eye(d), lower=True)
            ptr[i] = np.sum(Linv**2)
        for name, val in (("weights", w), ("means", mu), ("covariances", cov)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", logdet)
        object.__setattr__(self, "_prec_trace", ptr)

    @classmethod
    def gaussian(cls, mean, cov) -> "GmmSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(np.ones(1), mean[None, :], cov[None, :, :])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def _component_terms(self, X):
        """Per-component log joint densities and gradients g_k = -P_k (x - mu_k)."""
        n, d = X.shape
        k = self.n_components
        logjoint = np.empty((n, k))
        grads = np.empty((k, n, d))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        for i in range(k):
            diff = X - self.means[i]
            L = self._chol[i]
            half = solve_triangular(L, diff.T, lower=True)  # L^{-1}(x - mu)
            maha = np.sum(half**2, axis=0)
            logjoint[:, i] = logw[i] - 0.5 * (d * _LOG_2PI + self._logdet[i] + maha)
            grads[i] = -solve_triangular(L.T, half, lower=False).T
        return logjoint, grads

    def logpdf(self, x):
        X, single = as_batch(x, self.dim)
        logjoint, _ = self._component_terms(X)
        out = logsumexp(logjoint, axis=1)
        return float(out[0]) if single else out

    def responsibilities(self, x) -> np.ndarray:
        X, _ = as_batch(x, self.dim)
        logjoint, _ = self._component_terms(X)
        return np.exp(logjoint - logsumexp(logjoint, axis=1, keepdims=True))

    def _score_parts(self, X):
        logjoint, grads = self._component_terms(X)
        r = np.exp(logjoint - logsumexp(logjoint, axis=1, keepdims=True))  # (n, k)
        s = np.einsum("nk,knd->nd", r, grads)
        return r, grads, s

    def score(self, x):
        X, single = as_batch(x, self.dim)
        _, _, s = self._score_parts(X)
        return s[0] if single else s

    def divergence(self, x):
        # Laplacian of log p = sum_k r_k |g_k|^2 - |s|^2 - sum_k r_k tr(P_k)
        X, single = as_batch(x, self.dim)
        r, grads, s = self._score_parts(X)
        gsq = np.einsum("knd,knd->nk", grads, grads)
        div = np.sum(r * gsq, axis=1) - np.sum(s**2, axis=1) - r @ self._prec_trace
        return float(div[0]) if single else div

    def perturb(self, sigma: float) -> "GmmSpec":
        return perturb_gmm(self, sigma)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Categorical component choice followed by a Gaussian draw."""
        n = int(n)
        d = self.dim
        if n <= 0:
            return np.empty((0, d))
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, d))
        out = np.empty((n, d))
        for i in range(self.n_components):
            idx = comp == i
            out[idx] = self.means[i] + z[idx] @ self._chol[i].T
        return out

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mixture mean and covariance."""
        mean = self.weights @ self.means
        diff = self.means - mean
        cov = np.einsum("k,kij->ij", self.weights, self.covariances) + np.einsum(
            "k,ki,kj->ij", self.weights, diff, diff
        )
        return mean, cov


def gmm_logpdf(spec: GmmSpec, x):
    return spec.logpdf(x)


def gmm_score(spec: GmmSpec, x):
    return spec.score(x)


def gmm_score_divergence(spec: GmmSpec, x):
    return spec.divergence(x)


def perturb_gmm(spec: GmmSpec, sigma: float) -> GmmSpec:
    """Convolve the mixture with N(0, sigma^2 I)."""
    if not sigma >= 0:
        raise InputError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return spec
    cov = spec.covariances + sigma**2 * np.eye(spec.dim)
    return GmmSpec(spec.weights.copy(), spec.means.copy(), cov)


def hyvarinen_score(s, x):
    """div s(x) + 0.5 * |s(x)|^2 for a single point or a batch."""
    X, single = as_batch(x, getattr(s, "dim", None))
    div = np.asarray(s.divergence(X), dtype=float)
    sc = np.asarray(s.score(X), dtype=float)
    h = div + 0.5 * np.sum(sc**2, axis=1)
    bad = ~np.isfinite(h)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite Hyvarinen score at row {i}", location=i)
    return float(h[0]) if single else h


def increment(s0, s1, x):
    """Detection increment H(x; s0) - H(x; s1)."""
    d0, d1 = getattr(s0, "dim", None), getattr(s1, "dim", None)
    if d0 is not None and d1 is not None and d0 != d1:
        raise InputError(f"score dimensions differ: {d0} vs {d1}")
    return hyvarinen_score(s0, x) - hyvarinen_score(s1, x)


def fisher_divergence_mc(sampler, s0, s1, n: int, seed) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of |s1(x) - s0(x)|^2 over x ~ sampler.

    ``sampler(rng, n)`` must return an ``(n, d)`` array of draws from p1.
    """
    if n < 2:
        raise InputError("need at least two samples")
    rng = np.random.default_rng(seed)
    X = np.asarray(sampler(rng, n), dtype=float)
    vals = np.sum((np.asarray(s1.score(X)) - np.asarray(s0.score(X))) ** 2, axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def mc_mean(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else np.nan
    return float(v.mean()), float(se)


def drift_report(sampler, s0, s1, n: int, seed) -> dict:
    """Mean increment under p1 next to both Fisher-divergence conventions.

    Integration by parts gives E_p1[H(x; s0) - H(x; s1)] = 0.5 * E_p1|s1 - s0|^2
    when s1 is the true p1 score. The unscaled expectation is reported as well
    so the two conventions can be compared side by side.
    """
    rng = np.random.default_rng(seed)
    X = np.asarray(sampler(rng, n), dtype=float)
    inc = increment(s0, s1, X)
    fd = np.sum((np.asarray(s1.score(X)) - np.asarray(s0.score(X))) ** 2, axis=1)
    m_inc, se_inc = mc_mean(inc)
    m_fd, se_fd = mc_mean(fd)
    return {
        "mean_increment": m_inc,
        "mean_increment_se": se_inc,
        "fisher_unscaled": m_fd,
        "fisher_unscaled_se": se_fd,
        "fisher_half": 0.5 * m_fd,
        "fisher_half_se": 0.5 * se_fd,
    }

"""Synthetic datasets: 2-D ring mixtures and a 10-D neural-network dataset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, NumericError
from .statistics import GmmSpec


@dataclass(frozen=True)
class RingMixtureConfig:
    n_components: int
    radius: float = 8.0
    offset: float = 0.0
    component_cov: Optional[tuple] = None  # defaults to identity

    def __post_init__(self):
        if self.n_components < 1:
            raise InputError("n_components must be at least 1")
        if not self.radius > 0:
            raise InputError("radius must be positive")


PRE_RING = RingMixtureConfig(n_components=30, radius=8.0, offset=-0.5)
POST_RING = RingMixtureConfig(n_components=8, radius=8.0, offset=0.5)


def ring_spec(config: RingMixtureConfig) -> GmmSpec:
    """Equal-weight mixture with means at radius*(cos, sin)(2*pi*i/n) + offset, i = 1..n."""
    n = config.n_components
    angles = 2.0 * np.pi * np.arange(1, n + 1) / n
    means = config.radius * np.column_stack([np.cos(angles), np.sin(angles)]) + config.offset
    cov = np.eye(2) if config.component_cov is None else np.asarray(config.component_cov, dtype=float)
    return GmmSpec(np.full(n, 1.0 / n), means, np.repeat(cov[None], n, axis=0))


def ring_gmm_spec(role: str, config: Optional[RingMixtureConfig] = None) -> GmmSpec:
    """Pre-change: 30 components shifted by -1/2. Post-change: 8 components shifted by +1/2."""
    if config is None:
        if role == "pre":
            config = PRE_RING
        elif role == "post":
            config = POST_RING
        else:
            raise InputError(f"role must be 'pre' or 'post', got {role!r}")
    return ring_spec(config)


def sample_gmm(spec: GmmSpec, n: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return spec.sample(n, rng)


def inject_noise(x, sigma: float, K: int, seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """K perturbed copies ``(x + eps_k, eps_k)`` with eps_k ~ N(0, sigma^2 I)."""
    if not sigma > 0:
        raise InputError("sigma must be positive")
    if K < 1:
        raise InputError("K must be at least 1")
    x = np.asarray(x, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma, (K,) + x.shape)
    return [(x + e, e) for e in eps]


# -- neural-network dataset -------------------------------------------------


@dataclass
class Transform:
    """x -> W2 tanh(W1 x + b1) + b2."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def random(cls, latent_dim, hidden, output_dim, rng) -> "Transform":
        return cls(
            rng.standard_normal((hidden, latent_dim)),
            rng.standard_normal(hidden),
            rng.standard_normal((output_dim, hidden)),
            rng.standard_normal(output_dim),
        )

    def __call__(self, Z):
        return np.tanh(Z @ self.W1.T + self.b1) @ self.W2.T + self.b2

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "Transform":
        return cls(*(np.array(d[k], dtype=float) for k in ("W1", "b1", "W2", "b2")))


@dataclass(frozen=True)
class NnDatasetConfig:
    latent_dim: int = 4
    output_dim: int = 10
    hidden_dim: int = 32
    match_steps: int = 500
    match_lr: float = 1e-3
    match_samples: int = 5000
    n_pre: int = 1000
    n_post: int = 1000
    seed_pre: int = 0
    seed_post: int = 1
    seed_latent: int = 2
    seed_samples: int = 3

    def __post_init__(self):
        if min(self.latent_dim, self.output_dim, self.hidden_dim, self.match_samples) < 1:
            raise InputError("dimensions and sample counts must be positive")
        if self.match_steps < 0 or self.match_lr < 0:
            raise InputError("match_steps and match_lr must be non-negative")


def _moments(Y):
    m = Y.mean(axis=0)
    D = Y - m
    return m, D, D.T @ D / Y.shape[0]


def moment_gap(Y0, Y1) -> float:
    """|mean0 - mean1|^2 + |cov0 - cov1|_F^2 (biased covariances)."""
    m0, _, C0 = _moments(Y0)
    m1, _, C1 = _moments(Y1)
    return float(np.sum((m1 - m0) ** 2) + np.sum((C1 - C0) ** 2))


def _moment_gap_grad(tf: Transform, Z, m0, C0):
    n = Z.shape[0]
    A = np.tanh(Z @ tf.W1.T + tf.b1)
    m1, D, C1 = _moments(A @ tf.W2.T + tf.b2)
    loss = float(np.sum((m1 - m0) ** 2) + np.sum((C1 - C0) ** 2))
    # dL/dY = (2/n)(m1 - m0) + (4/n) D (C1 - C0); the mean's effect on C1 cancels since sum(D) = 0
    G = (2.0 / n) * (m1 - m0)[None, :] + (4.0 / n) * D @ (C1 - C0)
    dW2 = G.T @ A
    db2 = G.sum(axis=0)
    dZ = (G @ tf.W2) * (1.0 - A**2)
    return loss, (dZ.T @ Z, dZ.sum(axis=0), dW2, db2)


def match_moments(target: Transform, source: Transform, Z, steps: int, lr: float):
    """Gradient descent on ``source`` so its output moments approach ``target``'s.

    The gap is quartic in the output weights, so a fixed step diverges from
    N(0, 1) initial weights. Each step starts from the current step size,
    halves it until the loss decreases, and grows it by 1.5x after an
    accepted step. Returns the updated transform and the loss trace
    (initial loss plus one value per accepted step).
    """
    m0, _, C0 = _moments(target(Z))
    params = [source.W1.copy(), source.b1.copy(), source.W2.copy(), source.b2.copy()]
    loss, grads = _moment_gap_grad(Transform(*params), Z, m0, C0)
    if not np.isfinite(loss):
        raise NumericError("moment gap is not finite at the start", location=0)
    trace = [loss]
    for step in range(1, steps + 1):
        if lr == 0:
            trace.append(loss)
            continue
        for _ in range(200):
            trial = [p - lr * g for p, g in zip(params, grads)]
            with np.errstate(over="ignore", invalid="ignore"):
                new_loss, new_grads = _moment_gap_grad(Transform(*trial), Z, m0, C0)
            if np.isfinite(new_loss) and new_loss <= loss:
                break
            lr *= 0.5
        else:
            raise NumericError(f"moment matching could not decrease the loss at step {step}", location=step)
        params, loss, grads = trial, new_loss, new_grads
        trace.append(loss)
        lr *= 1.5
    return Transform(*params), trace


@dataclass
class NnDataset:
    pre: np.ndarray
    post: np.ndarray
    pre_transform: Transform
    post_transform: Transform
    config: NnDatasetConfig
    match_trace: list = field(default_factory=list)

    def sample(self, role: str, n: int, rng) -> np.ndarray:
        tf = self.pre_transform if role == "pre" else self.post_transform
        return tf(rng.standard_normal((n, self.config.latent_dim)))

    def description(self) -> dict:
        return {
            "config": asdict(self.config),
            "pre_transform": self.pre_transform.to_dict(),
            "post_transform": self.post_transform.to_dict(),
            "initial_moment_gap": self.match_trace[0] if self.match_trace else None,
            "final_moment_gap": self.match_trace[-1] if self.match_trace else None,
        }


def gen_nn_dataset(config: NnDatasetConfig = NnDatasetConfig()) -> NnDataset:
    """Two random tanh networks push 4-D Gaussians to 10-D; the post-change
    network is then tuned so its output mean and covariance match the pre-change one."""
    c = config
    pre_tf = Transform.random(c.latent_dim, c.hidden_dim, c.output_dim, np.random.default_rng(c.seed_pre))
    post_tf = Transform.random(c.latent_dim, c.hidden_dim, c.output_dim, np.random.default_rng(c.seed_post))
    Z = np.random.default_rng(c.seed_latent).standard_normal((c.match_samples, c.latent_dim))
    post_tf, trace = match_moments(pre_tf, post_tf, Z, c.match_steps, c.match_lr)
    rng = np.random.default_rng(c.seed_samples)
    pre = pre_tf(rng.standard_normal((c.n_pre, c.latent_dim)))
    post = post_tf(rng.standard_normal((c.n_post, c.latent_dim)))
    return NnDataset(pre, post, pre_tf, post_tf, c, trace)

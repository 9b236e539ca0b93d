"""One-hidden-layer score network with hand-written gradients.

The network maps x to ``(W2 tanh(W1 u + b1) + b2) / scale`` where
``u = (x - loc) / scale`` is an optional per-dimension standardization fitted
on the reference set (identity when absent). Outputs are always in the
original data units, so the score, its divergence and the training losses
need no conversion at detection time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InputError, TrainingDivergedError
from .statistics import as_batch

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh",)
OPTIMIZERS = ("adam", "gd")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScoreModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    noise_scale: float
    activation: str = "tanh"
    loc: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        h, d = self.W1.shape if self.W1.ndim == 2 else (-1, -1)
        if self.W1.ndim != 2 or self.b1.shape != (h,) or self.W2.shape != (d, h) or self.b2.shape != (d,):
            raise InputError(
                f"inconsistent parameter shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )
        if h < 1 or d < 1:
            raise InputError("input_dim and hidden_dim must be positive")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("W1", "b1", "W2", "b2")):
            raise InputError("parameters must be finite")
        if not (np.isfinite(self.noise_scale) and self.noise_scale > 0):
            raise InputError(f"noise_scale must be positive, got {self.noise_scale}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if (self.loc is None) != (self.scale is None):
            raise InputError("loc and scale must be given together")
        if self.loc is not None:
            loc, scale = _frozen(self.loc), _frozen(self.scale)
            if loc.shape != (d,) or scale.shape != (d,) or np.any(scale <= 0):
                raise InputError("standardization vectors must have length d and positive scale")
            object.__setattr__(self, "loc", loc)
            object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "noise_scale", float(self.noise_scale))

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    dim = input_dim

    @property
    def params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.W1, self.b1, self.W2, self.b2

    def with_params(self, W1, b1, W2, b2, **changes) -> "ScoreModel":
        return replace(self, W1=W1, b1=b1, W2=W2, b2=b2, **changes)

    def _standardize(self, X):
        if self.loc is None:
            return X
        return (X - self.loc) / self.scale

    def _inv_scale(self):
        return 1.0 if self.scale is None else 1.0 / self.scale

    def score(self, x):
        X, single = as_batch(x, self.input_dim)
        A = np.tanh(self._standardize(X) @ self.W1.T + self.b1)
        out = (A @ self.W2.T + self.b2) * self._inv_scale()
        return out[0] if single else out

    forward = score

    def _trace_weights(self):
        # c_j = sum_i W2[i, j] W1[j, i] / scale_i^2
        inv2 = np.asarray(self._inv_scale()) ** 2 * np.ones(self.input_dim)
        return np.einsum("ij,ji,i->j", self.W2, self.W1, inv2)

    def divergence(self, x):
        X, single = as_batch(x, self.input_dim)
        A = np.tanh(self._standardize(X) @ self.W1.T + self.b1)
        div = (1.0 - A**2) @ self._trace_weights()
        return float(div[0]) if single else div


@dataclass(frozen=True)
class GradientSet:
    dW1: np.ndarray
    db1: np.ndarray
    dW2: np.ndarray
    db2: np.ndarray

    def as_tuple(self):
        return self.dW1, self.db1, self.dW2, self.db2

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g**2) for g in self.as_tuple())))


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by offline training and online updates.

    ``optimizer`` is ``"adam"`` (adaptive moments) or ``"gd"`` (plain
    gradient descent). ``batch_size=None`` means full batch. ``hidden_dim``
    and ``standardize`` only matter when training starts from a fresh model.
    """

    epochs: int = 2000
    learning_rate: float = 3e-3
    noise_draws: int = 1
    sigma: float = 1.0
    optimizer: str = "adam"
    batch_size: Optional[int] = None
    seed: int = 0
    hidden_dim: int = 128
    standardize: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise InputError("epochs must be non-negative")
        if not self.learning_rate >= 0:
            raise InputError("learning_rate must be non-negative")
        if self.noise_draws < 1:
            raise InputError("noise_draws must be at least 1")
        if not self.sigma > 0:
            raise InputError("sigma must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise InputError(f"optimizer must be one of {OPTIMIZERS}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InputError("batch_size must be positive")


def init_model(input_dim: int, hidden_dim: int, sigma: float, seed=0, data=None) -> ScoreModel:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases.

    When ``data`` is given the model standardizes inputs with its
    per-dimension mean and standard deviation.
    """
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, 1.0 / np.sqrt(input_dim), (hidden_dim, input_dim))
    W2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (input_dim, hidden_dim))
    loc = scale = None
    if data is not None:
        X, _ = as_batch(data, input_dim)
        loc = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    return ScoreModel(W1, np.zeros(hidden_dim), W2, np.zeros(input_dim), sigma, loc=loc, scale=scale)


def forward(model: ScoreModel, x):
    return model.score(x)


def divergence(model: ScoreModel, x):
    return model.divergence(x)


def _noise_array(noises, n: int, d: int) -> np.ndarray:
    """Normalize noises to an ``(n, K, d)`` array.

    Accepts such an array directly or a list of ``(j, k, eps)`` triples that
    covers each data point with the same number of draws.
    """
    if isinstance(noises, np.ndarray):
        E = np.asarray(noises, dtype=float)
    else:
        triples = list(noises)
        if not triples:
            raise InputError("noise set is empty")
        K = 1 + max(int(k) for _, k, _ in triples)
        E = np.full((n, K, d), np.nan)
        seen = np.zeros((n, K), dtype=int)
        for j, k, eps in triples:
            eps = np.asarray(eps, dtype=float)
            if eps.shape != (d,):
                raise InputError(f"noise for point {j} draw {k} has shape {eps.shape}, expected ({d},)")
            E[int(j), int(k)] = eps
            seen[int(j), int(k)] += 1
        if np.any(seen != 1):
            raise InputError("noises must cover each data point with exactly K draws")
    if E.ndim == 2 and n == 1:
        E = E[None]
    if E.ndim != 3 or E.shape[0] != n or E.shape[2] != d or E.shape[1] < 1:
        raise InputError(f"noise array has shape {E.shape}, expected ({n}, K>=1, {d})")
    return E


def _prepare(model: ScoreModel, data, noises):
    X, _ = as_batch(data, model.input_dim)
    if X.shape[0] == 0:
        raise InputError("data is empty")
    E = _noise_array(noises, X.shape[0], model.input_dim)
    return X, E


def _dsm_pass(model: ScoreModel, X, E, sigma):
    n, K, d = E.shape
    Xp = (X[:, None, :] + E).reshape(n * K, d)
    U = model._standardize(Xp)
    A = np.tanh(U @ model.W1.T + model.b1)
    inv = model._inv_scale()
    out = (A @ model.W2.T + model.b2) * inv
    R = out + E.reshape(n * K, d) / sigma**2
    return U, A, R, inv


def dsm_loss(model: ScoreModel, data, noises, sigma: Optional[float] = None) -> float:
    """sum_j sum_k |s(x_j + eps_jk) + eps_jk / sigma^2|^2 with caller-supplied noise."""
    X, E = _prepare(model, data, noises)
    sigma = model.noise_scale if sigma is None else sigma
    _, _, R, _ = _dsm_pass(model, X, E, sigma)
    return float(np.sum(R**2))


def _backprop_output(model, U, A, G):
    """Parameter gradients given dL/d(raw network output) G."""
    dW2 = G.T @ A
    db2 = G.sum(axis=0)
    dZ = (G @ model.W2) * (1.0 - A**2)
    dW1 = dZ.T @ U
    db1 = dZ.sum(axis=0)
    return dW1, db1, dW2, db2


def _dsm_value_and_grad(model, X, E, sigma):
    U, A, R, inv = _dsm_pass(model, X, E, sigma)
    G = 2.0 * R * inv
    return float(np.sum(R**2)), GradientSet(*_backprop_output(model, U, A, G))


def dsm_grad(model: ScoreModel, data, noises, sigma: Optional[float] = None) -> GradientSet:
    """Exact gradient of :func:`dsm_loss` with respect to (W1, b1, W2, b2)."""
    X, E = _prepare(model, data, noises)
    sigma = model.noise_scale if sigma is None else sigma
    return _dsm_value_and_grad(model, X, E, sigma)[1]


def _sm_value_and_grad(model, X):
    U = model._standardize(X)
    A = np.tanh(U @ model.W1.T + model.b1)
    T = 1.0 - A**2
    inv = model._inv_scale()
    out = (A @ model.W2.T + model.b2) * inv
    c = model._trace_weights()
    value = float(np.sum(T @ c) + 0.5 * np.sum(out**2))

    dW1, db1, dW2, db2 = _backprop_output(model, U, A, out * inv)
    # divergence term: sum_n sum_j T_nj c_j, with dT/dz = -2 A T
    inv2 = np.asarray(inv) ** 2 * np.ones(model.input_dim)
    tsum = T.sum(axis=0)
    dW2 = dW2 + (model.W1 * tsum[:, None]).T * inv2[:, None]
    dZ = -2.0 * A * T * c
    dW1 = dW1 + (model.W2.T * tsum[:, None]) * inv2[None, :] + dZ.T @ U
    db1 = db1 + dZ.sum(axis=0)
    return value, GradientSet(dW1, db1, dW2, db2)


def sm_loss(model: ScoreModel, data) -> float:
    """Implicit score-matching objective sum_j [div s(x_j) + 0.5 |s(x_j)|^2]."""
    X, _ = as_batch(data, model.input_dim)
    if X.shape[0] == 0:
        raise InputError("data is empty")
    return _sm_value_and_grad(model, X)[0]


def sm_grad(model: ScoreModel, data) -> GradientSet:
    X, _ = as_batch(data, model.input_dim)
    if X.shape[0] == 0:
        raise InputError("data is empty")
    return _sm_value_and_grad(model, X)[1]


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        new = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            new.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return new


class _GD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


def _make_optimizer(config: TrainConfig, model: ScoreModel):
    if config.optimizer == "adam":
        return _Adam([p.shape for p in model.params], config.learning_rate)
    return _GD(config.learning_rate)


def _fresh_or_init(data_X, config: TrainConfig, init: Optional[ScoreModel]) -> ScoreModel:
    if init is None:
        return init_model(
            data_X.shape[1],
            config.hidden_dim,
            config.sigma,
            seed=np.random.SeedSequence([config.seed, 1]),
            data=data_X if config.standardize else None,
        )
    if init.input_dim != data_X.shape[1]:
        raise InputError(f"model expects dimension {init.input_dim}, data has {data_X.shape[1]}")
    return init


def _run_training(X, config, model, value_and_grad, rng):
    """Shared epoch loop. ``value_and_grad(model, Xbatch, rng)`` does one batch."""
    opt = _make_optimizer(config, model)
    n = X.shape[0]
    losses = []
    params = list(model.params)
    for epoch in range(1, config.epochs + 1):
        if config.batch_size is None or config.batch_size >= n:
            batches = [X]
        else:
            perm = rng.permutation(n)
            batches = [X[perm[i : i + config.batch_size]] for i in range(0, n, config.batch_size)]
        total = 0.0
        for Xb in batches:
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = value_and_grad(model, Xb, rng)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            total += value
            params = opt.step(params, grads.as_tuple())
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(epoch, float("nan"))
            model = model.with_params(*params)
        losses.append(total)
    return model, losses


def train_offline(data, config: TrainConfig, init: Optional[ScoreModel] = None, return_trace: bool = False):
    """Minimize the denoising score-matching loss with fresh noise every epoch.

    Each epoch draws ``config.noise_draws`` perturbations per point and takes
    one optimizer step per batch. Returns the trained model, or
    ``(model, losses)`` with ``return_trace=True``; ``losses[e]`` is the loss
    evaluated before the parameter update of epoch ``e + 1``.
    """
    X, _ = as_batch(data)
    if X.shape[0] == 0:
        raise InputError("training data is empty")
    model = _fresh_or_init(X, config, init)
    if config.epochs == 0:
        return (model, []) if return_trace else model
    if model.noise_scale != config.sigma:
        model = replace(model, noise_scale=config.sigma)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    K, sigma = config.noise_draws, config.sigma

    def value_and_grad(m, Xb, rng):
        E = rng.normal(0.0, sigma, (Xb.shape[0], K, Xb.shape[1]))
        return _dsm_value_and_grad(m, Xb, E, sigma)

    model, losses = _run_training(X, config, model, value_and_grad, rng)
    log.debug("dsm training finished: final loss %.6g", losses[-1])
    return (model, losses) if return_trace else model


def train_implicit(data, config: TrainConfig, init: Optional[ScoreModel] = None, return_trace: bool = False):
    """Minimize the noise-free implicit score-matching objective (no noise draws)."""
    X, _ = as_batch(data)
    if X.shape[0] == 0:
        raise InputError("training data is empty")
    model = _fresh_or_init(X, config, init)
    if config.epochs == 0:
        return (model, []) if return_trace else model
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    model, losses = _run_training(X, config, model, lambda m, Xb, _: _sm_value_and_grad(m, Xb), rng)
    return (model, losses) if return_trace else model


def online_update(model: ScoreModel, window, config: TrainConfig, steps: int = 5, rng=None) -> ScoreModel:
    """Plain gradient steps on the windowed DSM loss, fresh noise per step.

    The optimizer field of ``config`` is not consulted: every step is
    ``theta <- theta - lr * grad``. ``rng`` defaults to one seeded from
    ``config.seed``.
    """
    W, _ = as_batch(window, model.input_dim)
    if W.shape[0] == 0:
        raise InputError("window is empty")
    if steps < 0:
        raise InputError("steps must be non-negative")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    lr, K, sigma = config.learning_rate, config.noise_draws, model.noise_scale
    params = list(model.params)
    for step in range(steps):
        E = rng.normal(0.0, sigma, (W.shape[0], K, W.shape[1]))
        value, grads = _dsm_value_and_grad(model, W, E, sigma)
        if not np.isfinite(value):
            raise TrainingDivergedError(step + 1, value)
        if lr == 0:
            continue
        params = [p - lr * g for p, g in zip(params, grads.as_tuple())]
        model = model.with_params(*params)
    return model

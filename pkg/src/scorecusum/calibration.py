"""Threshold calibration and Monte-Carlo ARL / detection-delay estimation.

Randomness: every Monte-Carlo loop derives one child seed per iteration with
``np.random.SeedSequence(seed).spawn(n)``; child ``i`` is split again into a
data stream and a detector stream. Iteration ``i`` therefore sees the same
draws no matter how many iterations run or in which order.

A *detector* is any object with ``process(rng)`` returning a fresh statistic
process (see :mod:`scorecusum.detector`). A *sampler* is a callable
``sampler(rng, n) -> (n, d) array``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError
from .scorenet import TrainConfig, train_offline
from .statistics import GmmSpec

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def iteration_rngs(seed, n: int) -> list[tuple[np.random.Generator, np.random.Generator]]:
    """(data_rng, detector_rng) for each of n iterations."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        data, det = child.spawn(2)
        out.append((np.random.default_rng(data), np.random.default_rng(det)))
    return out


def _new_process(detector, rng):
    if hasattr(detector, "process"):
        return detector.process(rng)
    return detector(rng)


@dataclass(frozen=True)
class CalibrationConfig:
    gamma: float
    n_iter: int = 200
    horizon: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (self.gamma > 0 and self.n_iter >= 1 and self.horizon >= 1):
            raise InputError("gamma, n_iter and horizon must be positive")

    @property
    def quantile_level(self) -> float:
        return quantile_level(self.horizon, self.gamma)


def quantile_level(horizon: int, gamma: float) -> float:
    """exp(-horizon / gamma): P(T > horizon) when T is exponential with mean gamma."""
    level = math.exp(-horizon / gamma)
    if not 0.0 < level < 1.0:
        raise InputError(f"quantile level exp(-{horizon}/{gamma}) = {level} is outside (0, 1)")
    return level


@dataclass
class CalibrationResult:
    threshold: float
    maxima: np.ndarray
    quantile_level: float
    config: CalibrationConfig

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "quantile_level": self.quantile_level,
            "config": asdict(self.config),
            "maxima": [float(m) for m in self.maxima],
        }


def simulate_maxima(detector, pre_sampler: Sampler, n_iter: int, horizon: int, seed) -> np.ndarray:
    """Running maximum of the statistic over ``horizon`` pre-change steps, per iteration."""
    maxima = np.empty(n_iter)
    for i, (data_rng, det_rng) in enumerate(iteration_rngs(seed, n_iter)):
        proc = _new_process(detector, det_rng)
        S = proc.feed(pre_sampler(data_rng, horizon))
        maxima[i] = np.max(S)
    return maxima


def threshold_from_maxima(maxima, level: float) -> float:
    """Empirical quantile with linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(maxima, dtype=float), level, method="linear"))


def calibrate_threshold(detector, pre_sampler: Sampler, config: CalibrationConfig) -> CalibrationResult:
    level = config.quantile_level
    maxima = simulate_maxima(detector, pre_sampler, config.n_iter, config.horizon, config.seed)
    return CalibrationResult(threshold_from_maxima(maxima, level), maxima, level, config)


@dataclass
class DelayEstimate:
    """Per-run values with censored runs entered at their cap.

    ``mean`` averages all runs, so with censoring it is a lower bound
    (``lower_bound`` is then True). ``mean_uncensored`` drops them instead.
    """

    mean: float
    se: float
    n_runs: int
    n_censored: int
    values: np.ndarray
    censored: np.ndarray

    @property
    def lower_bound(self) -> bool:
        return self.n_censored > 0

    @property
    def mean_uncensored(self) -> float:
        keep = ~self.censored
        return float(self.values[keep].mean()) if keep.any() else float("nan")

    @classmethod
    def from_runs(cls, values, censored) -> "DelayEstimate":
        v = np.asarray(values, dtype=float)
        c = np.asarray(censored, dtype=bool)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        return cls(float(v.mean()), se, int(v.size), int(c.sum()), v, c)


def first_alarm(detector, rng_data, rng_det, tau: float, cap: int, blocks: Callable, chunk: int = 1000):
    """Stopping time of one run, or None if no alarm within ``cap`` steps.

    ``blocks(rng, start, n)`` returns observations ``start+1 .. start+n``.
    """
    proc = _new_process(detector, rng_det)
    t = 0
    while t < cap:
        n = min(chunk, cap - t)
        proc.feed(blocks(rng_data, t, n), threshold=tau)
        if proc.alarm_time is not None:
            return proc.alarm_time
        t += n
    return None


def estimate_arl(detector, pre_sampler: Sampler, tau: float, runs: int, cap: int, seed=0, chunk: int = 1000) -> DelayEstimate:
    """Mean stopping time under pre-change data only."""
    if cap < 1 or runs < 1:
        raise InputError("runs and cap must be positive")
    blocks = lambda rng, start, n: pre_sampler(rng, n)
    values, cens = [], []
    for data_rng, det_rng in iteration_rngs(seed, runs):
        T = first_alarm(detector, data_rng, det_rng, tau, cap, blocks, chunk)
        values.append(cap if T is None else T)
        cens.append(T is None)
    return DelayEstimate.from_runs(values, cens)


def estimate_wadd(
    detector,
    pre_sampler: Sampler,
    post_sampler: Sampler,
    tau: float,
    change_point: int = 1,
    runs: int = 200,
    cap: int = 100_000,
    seed=0,
    chunk: int = 1000,
) -> DelayEstimate:
    """Average of (T - nu + 1)^+ with pre-change data before ``change_point`` and post-change after.

    Only the given change point is simulated; at nu = 1 this is the usual
    stand-in for the worst case of a CUSUM-type statistic.
    """
    nu = int(change_point)
    if nu < 1:
        raise InputError("change_point must be at least 1")
    if cap < nu or runs < 1:
        raise InputError("need runs >= 1 and cap >= change_point")

    def blocks(rng, start, n):
        n_pre = max(0, min(n, nu - 1 - start))
        parts = []
        if n_pre:
            parts.append(pre_sampler(rng, n_pre))
        if n - n_pre:
            parts.append(post_sampler(rng, n - n_pre))
        return np.concatenate(parts, axis=0)

    values, cens = [], []
    for data_rng, det_rng in iteration_rngs(seed, runs):
        T = first_alarm(detector, data_rng, det_rng, tau, cap, blocks, chunk)
        if T is None:
            values.append(cap - nu + 1)
            cens.append(True)
        else:
            values.append(max(T - nu + 1, 0))
            cens.append(False)
    return DelayEstimate.from_runs(values, cens)


@dataclass(frozen=True)
class EvalConfig:
    n_iter: int = 200
    horizon: int = 1000
    arl_runs: int = 0
    arl_cap_factor: float = 10.0
    wadd_runs: int = 200
    wadd_cap: int = 20_000
    change_point: int = 1
    seed: int = 0


TRADEOFF_COLUMNS = (
    "gamma",
    "threshold",
    "quantile_level",
    "arl",
    "arl_se",
    "arl_censored",
    "wadd",
    "wadd_se",
    "wadd_censored",
)


def tradeoff_curve(detector, pre_sampler: Sampler, post_sampler: Sampler, gammas: Sequence[float], cfg: EvalConfig) -> list[dict]:
    """Calibrate a threshold for each target ARL and estimate ARL and nu=1 delay there.

    One set of simulated maxima (from ``cfg.seed``) serves the whole grid, so
    thresholds are monotone in gamma. ARL estimation is skipped when
    ``cfg.arl_runs == 0`` (columns are NaN).
    """
    gammas = [float(g) for g in gammas]
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise InputError("gamma grid must be ascending")
    levels = [quantile_level(cfg.horizon, g) for g in gammas]
    maxima = simulate_maxima(detector, pre_sampler, cfg.n_iter, cfg.horizon, cfg.seed)
    rows = []
    for gamma, level in zip(gammas, levels):
        tau = threshold_from_maxima(maxima, level)
        row = {"gamma": gamma, "threshold": tau, "quantile_level": level}
        if cfg.arl_runs > 0:
            cap = max(1, int(math.ceil(cfg.arl_cap_factor * gamma)))
            arl = estimate_arl(detector, pre_sampler, tau, cfg.arl_runs, cap, seed=cfg.seed + 1)
            row.update(arl=arl.mean, arl_se=arl.se, arl_censored=arl.n_censored)
        else:
            row.update(arl=float("nan"), arl_se=float("nan"), arl_censored=0)
        wadd = estimate_wadd(
            detector, pre_sampler, post_sampler, tau, cfg.change_point, cfg.wadd_runs, cfg.wadd_cap, seed=cfg.seed + 2
        )
        row.update(wadd=wadd.mean, wadd_se=wadd.se, wadd_censored=wadd.n_censored)
        rows.append(row)
    return rows


SIGMA_COLUMNS = ("sigma", "eps_est", "eps_pert", "combined")


def sigma_tradeoff(
    target: GmmSpec,
    sigmas: Sequence[float],
    train_cfg: TrainConfig,
    n_train: int = 1000,
    n_eval: int = 20_000,
    seed=0,
) -> list[dict]:
    """Empirical estimation and perturbation errors of DSM across noise scales.

    For each sigma a model is trained on one shared sample from ``target``;
    both errors are Monte-Carlo means of Euclidean norms under x ~ target:
    est = |s_hat(x) - grad log p_sigma(x)|, pert = |grad log p_sigma(x) - grad log p(x)|.
    The combined column is their plain sum.
    """
    rng_train, rng_eval = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    X = target.sample(n_train, rng_train)
    Xe = target.sample(n_eval, rng_eval)
    true_score = target.score(Xe)
    rows = []
    for sigma in sigmas:
        cfg = TrainConfig(**{**asdict(train_cfg), "sigma": float(sigma)})
        model = train_offline(X, cfg)
        pert_score = target.perturb(sigma).score(Xe)
        est = float(np.mean(np.linalg.norm(model.score(Xe) - pert_score, axis=1)))
        pert = float(np.mean(np.linalg.norm(pert_score - true_score, axis=1)))
        rows.append({"sigma": float(sigma), "eps_est": est, "eps_pert": pert, "combined": est + pert})
    return rows


def format_table(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    """Aligned plain-text table."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)

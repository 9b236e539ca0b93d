"""CUSUM state machine, stopping rule, and offline/online runners.

The statistic is the reflected walk ``S_t = max(S_{t-1}, 0) + delta_t`` with
``S_0 = 0``; an alarm is raised at the first ``t`` with ``S_t >= tau``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import InputError, NumericError
from .scorenet import ScoreModel, TrainConfig, online_update
from .statistics import increment

log = logging.getLogger(__name__)

CLIP = 1e12


def _guard(delta: float, t: int) -> tuple[float, bool]:
    """Clip huge or infinite increments; NaN is an error."""
    if math.isnan(delta):
        raise NumericError(f"non-finite increment at t={t}", location=t)
    if delta > CLIP:
        return CLIP, True
    if delta < -CLIP:
        return -CLIP, True
    return delta, False


def _check_tau(tau):
    tau = float(tau)
    if math.isnan(tau):
        raise InputError("threshold must not be NaN")
    return tau


@dataclass(frozen=True)
class DetectorState:
    statistic: float = 0.0
    t: int = 0
    mode: str = "offline"
    window: tuple = ()
    model: Optional[ScoreModel] = None
    n_clipped: int = 0

    def __post_init__(self):
        if self.mode not in ("offline", "online"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.mode == "offline" and (self.window or self.model is not None):
            raise InputError("offline state carries no window or model")


@dataclass
class RunRecord:
    change_point: Optional[int]
    stopping_time: Optional[int]
    alarm_raised: bool
    n_observed: int
    statistic_trace: list = field(default_factory=list)
    increments: Optional[list] = None
    n_clipped: int = 0
    alarms: list = field(default_factory=list)

    @property
    def censored(self) -> bool:
        return not self.alarm_raised

    @property
    def delay(self) -> Optional[int]:
        """(T - nu + 1)^+ when both are known."""
        if not self.alarm_raised or self.change_point is None:
            return None
        return max(self.stopping_time - self.change_point + 1, 0)

    @property
    def statistics(self) -> np.ndarray:
        return np.array([s for _, s in self.statistic_trace])


def cusum_update(previous: float, delta: float) -> float:
    return max(previous, 0.0) + delta


def _offline_step(state, x, increment_fn):
    t = state.t + 1
    delta, clipped = _guard(float(increment_fn(np.asarray(x, dtype=float))), t)
    S = cusum_update(state.statistic, delta)
    return replace(state, statistic=S, t=t, n_clipped=state.n_clipped + clipped), S, delta


def score_increment(s0, s1) -> Callable:
    """Increment function x -> H(x; s0) - H(x; s1) (single point or batch)."""
    return lambda x: increment(s0, s1, x)


def step(state: DetectorState, x, s0, s1, tau: float):
    """One offline CUSUM step. Returns ``(new_state, S_t, alarm)``."""
    new, S, _ = _offline_step(state, x, score_increment(s0, s1))
    return new, S, S >= tau


def online_step(state: DetectorState, x, s0, tau: float, w: int, config: TrainConfig, steps: int, rng):
    """One step of the windowed online detector. Returns ``(new_state, S_t, alarm, delta)``.

    During warm-up (``t <= w``) the statistic is held at zero. Afterwards the
    increment for ``x_t`` is scored with the post-change model from the
    previous step, and only then is the model updated on the window that
    now includes ``x_t``.
    """
    t = state.t + 1
    window = (state.window + (np.asarray(x, dtype=float),))[-w:]
    if t <= w:
        return replace(state, t=t, window=window, statistic=0.0), 0.0, 0.0 >= tau, None
    delta, clipped = _guard(float(increment(s0, state.model, window[-1])), t)
    S = cusum_update(state.statistic, delta)
    model = online_update(state.model, np.array(window), config, steps=steps, rng=rng)
    new = replace(state, statistic=S, t=t, window=window, model=model, n_clipped=state.n_clipped + clipped)
    return new, S, S >= tau, delta


def run_offline(
    stream: Iterable,
    s0,
    s1,
    tau: float,
    change_point: Optional[int] = None,
    record_increments: bool = True,
    resume: bool = False,
) -> RunRecord:
    """Iterate :func:`step` until the first alarm or the end of the stream.

    With ``resume=True`` (an extension) the statistic is reset to zero after
    each alarm and monitoring continues; ``stopping_time`` stays the first
    alarm and ``alarms`` lists all of them.
    """
    return run_cusum(stream, score_increment(s0, s1), tau, change_point, record_increments, resume)


def run_cusum(
    stream: Iterable,
    increment_fn: Callable,
    tau: float,
    change_point: Optional[int] = None,
    record_increments: bool = True,
    resume: bool = False,
) -> RunRecord:
    """:func:`run_offline` for an arbitrary increment function."""
    tau = _check_tau(tau)
    state = DetectorState()
    rec = RunRecord(change_point, None, False, 0, increments=[] if record_increments else None)
    for x in iter_rows(stream):
        state, S, delta = _offline_step(state, x, increment_fn)
        rec.statistic_trace.append((state.t, S))
        if record_increments:
            rec.increments.append(delta)
        if S >= tau:
            rec.alarms.append(state.t)
            if rec.stopping_time is None:
                rec.stopping_time, rec.alarm_raised = state.t, True
            if not resume:
                break
            state = replace(state, statistic=0.0)
    rec.n_observed = state.t
    rec.n_clipped = state.n_clipped
    return rec


def run_online(
    stream: Iterable,
    s0,
    init_model: ScoreModel,
    tau: float,
    w: int,
    train_cfg: TrainConfig,
    steps: int = 5,
    seed=None,
    change_point: Optional[int] = None,
    record_increments: bool = True,
) -> RunRecord:
    """Online detector: the post-change model starts at ``init_model`` and is
    refitted on the trailing ``w`` observations after every step."""
    tau = _check_tau(tau)
    if w < 1:
        raise InputError("window size must be at least 1")
    rng = np.random.default_rng(train_cfg.seed if seed is None else seed)
    state = DetectorState(mode="online", model=init_model)
    rec = RunRecord(change_point, None, False, 0, increments=[] if record_increments else None)
    for x in iter_rows(stream):
        state, S, alarm, delta = online_step(state, x, s0, tau, w, train_cfg, steps, rng)
        rec.statistic_trace.append((state.t, S))
        if record_increments and delta is not None:
            rec.increments.append(delta)
        if alarm and state.t > w:
            rec.stopping_time, rec.alarm_raised = state.t, True
            rec.alarms.append(state.t)
            break
    rec.n_observed = state.t
    rec.n_clipped = state.n_clipped
    return rec


# -- batch processes used by Monte-Carlo calibration and evaluation --------


class CusumProcess:
    """CUSUM over a vectorized increment function ``increment_fn(X) -> (n,)``."""

    def __init__(self, increment_fn: Callable[[np.ndarray], np.ndarray]):
        self.increment_fn = increment_fn
        self.statistic = 0.0
        self.t = 0
        self.n_clipped = 0
        self.alarm_time = None

    def feed(self, X: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
        """Consume a block of observations and return the statistic after each.

        With a threshold the output stops at (and includes) the first alarm.
        """
        deltas = np.asarray(self.increment_fn(np.asarray(X, dtype=float)), dtype=float).tolist()
        out = []
        S = self.statistic
        for d in deltas:
            self.t += 1
            d, clipped = _guard(d, self.t)
            self.n_clipped += clipped
            S = (S if S > 0.0 else 0.0) + d
            out.append(S)
            if threshold is not None and S >= threshold:
                self.alarm_time = self.t
                break
        self.statistic = S
        return np.array(out)


class ShewhartProcess:
    """Per-observation statistic monitored directly, no accumulation."""

    def __init__(self, statistic_fn: Callable[[np.ndarray], np.ndarray]):
        self.statistic_fn = statistic_fn
        self.t = 0
        self.alarm_time = None

    def feed(self, X: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
        vals = np.asarray(self.statistic_fn(np.asarray(X, dtype=float)), dtype=float)
        if np.isnan(vals).any():
            raise NumericError(f"non-finite statistic near t={self.t + 1}", location=self.t + 1)
        if threshold is not None:
            hit = np.flatnonzero(vals >= threshold)
            if hit.size:
                vals = vals[: hit[0] + 1]
                self.alarm_time = self.t + vals.size
        self.t += vals.size
        return vals


class OnlineCusumProcess:
    """Batch-interface wrapper around :func:`online_step`."""

    def __init__(self, s0, init_model: ScoreModel, w: int, config: TrainConfig, steps: int, rng):
        self.s0, self.w, self.config, self.steps, self.rng = s0, w, config, steps, rng
        self.state = DetectorState(mode="online", model=init_model)
        self.alarm_time = None

    @property
    def t(self) -> int:
        return self.state.t

    def feed(self, X: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
        tau = math.inf if threshold is None else threshold
        out = []
        for x in np.asarray(X, dtype=float):
            self.state, S, alarm, _ = online_step(
                self.state, x, self.s0, tau, self.w, self.config, self.steps, self.rng
            )
            out.append(S)
            if alarm and self.state.t > self.w:
                self.alarm_time = self.state.t
                break
        return np.array(out)


def iter_rows(stream) -> Iterable[np.ndarray]:
    """Yield rows of an array or items of an iterable as float vectors."""
    if isinstance(stream, np.ndarray):
        yield from (np.atleast_1d(r) for r in stream)
    else:
        for r in stream:
            yield np.atleast_1d(np.asarray(r, dtype=float))


# -- detector objects: one per method, shared by the runners and Monte-Carlo --


class CusumDetector:
    """A CUSUM detector defined by its increment function."""

    kind = "cusum"

    def __init__(self, increment_fn: Callable):
        self.increment_fn = increment_fn

    def process(self, rng=None) -> CusumProcess:
        return CusumProcess(self.increment_fn)

    def run(self, stream, tau: float, change_point=None, seed=None, resume: bool = False) -> RunRecord:
        return run_cusum(stream, self.increment_fn, tau, change_point, resume=resume)


class ShewhartDetector:
    """Alarm when a per-observation statistic crosses the threshold."""

    kind = "shewhart"

    def __init__(self, statistic_fn: Callable):
        self.statistic_fn = statistic_fn

    def process(self, rng=None) -> ShewhartProcess:
        return ShewhartProcess(self.statistic_fn)

    def run(self, stream, tau: float, change_point=None, seed=None, resume: bool = False) -> RunRecord:
        tau = _check_tau(tau)
        rec = RunRecord(change_point, None, False, 0, increments=None)
        t = 0
        for x in iter_rows(stream):
            t += 1
            v = float(np.asarray(self.statistic_fn(x)).reshape(()))
            if math.isnan(v):
                raise NumericError(f"non-finite statistic at t={t}", location=t)
            rec.statistic_trace.append((t, v))
            if v >= tau:
                rec.alarms.append(t)
                if rec.stopping_time is None:
                    rec.stopping_time, rec.alarm_raised = t, True
                if not resume:
                    break
        rec.n_observed = t
        return rec


class OnlineDetector:
    """Windowed online DSM detector with a frozen pre-change score."""

    kind = "online"

    def __init__(self, s0, init_model: ScoreModel, w: int, config: TrainConfig, steps: int = 5):
        if w < 1:
            raise InputError("window size must be at least 1")
        self.s0, self.init_model, self.w, self.config, self.steps = s0, init_model, w, config, steps

    def process(self, rng=None) -> OnlineCusumProcess:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        return OnlineCusumProcess(self.s0, self.init_model, self.w, self.config, self.steps, rng)

    def run(self, stream, tau: float, change_point=None, seed=None, resume: bool = False) -> RunRecord:
        return run_online(
            stream, self.s0, self.init_model, tau, self.w, self.config, self.steps, seed=seed, change_point=change_point
        )

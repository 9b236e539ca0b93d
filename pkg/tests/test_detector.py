import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import cusum_max_form
from scorecusum.detector import (
    CLIP,
    CusumDetector,
    CusumProcess,
    DetectorState,
    OnlineDetector,
    ShewhartDetector,
    cusum_update,
    run_cusum,
    run_offline,
    run_online,
    step,
)
from scorecusum.errors import InputError, NumericError
from scorecusum.scorenet import TrainConfig, init_model
from scorecusum.statistics import AnalyticScore, GmmSpec, zero_score


def const_increments(values):
    it = iter(values)
    return lambda x: next(it)


def test_recursion_hand_values():
    rec = run_cusum(np.zeros((4, 1)), const_increments([1.0, -2.0, 0.5, 0.25]), tau=math.inf)
    assert rec.statistics.tolist() == [1.0, -1.0, 0.5, 0.75]
    assert not rec.alarm_raised and rec.censored and rec.n_observed == 4


def test_first_crossing_stops():
    rec = run_cusum(np.zeros((5, 1)), const_increments([1.0, 1.0, 1.0, 1.0, 1.0]), tau=2.0)
    assert rec.stopping_time == 2 and rec.alarm_raised and rec.n_observed == 2


def test_equality_raises_alarm():
    _, S, alarm = step(DetectorState(), [0.0], zero_score(1), zero_score(1), tau=0.0)
    assert S == 0.0 and alarm


def test_zero_increment_never_alarms_positive_tau():
    rec = run_offline(np.ones((100, 2)), zero_score(2), zero_score(2), tau=1e-9)
    assert not rec.alarm_raised


def test_nan_tau_rejected():
    with pytest.raises(InputError):
        run_cusum([[0.0]], lambda x: 0.0, float("nan"))


def test_nan_increment_raises_with_time():
    with pytest.raises(NumericError) as info:
        run_cusum(np.zeros((3, 1)), const_increments([0.0, float("nan"), 0.0]), tau=10)
    assert info.value.location == 2


def test_infinite_increment_is_clipped_and_counted():
    rec = run_cusum(np.zeros((2, 1)), const_increments([math.inf, 1.0]), tau=math.inf)
    assert rec.statistics[0] == CLIP and rec.n_clipped == 1


def test_resume_collects_alarms():
    rec = run_cusum(np.zeros((6, 1)), const_increments([2.0] * 6), tau=3.0, resume=True)
    assert rec.stopping_time == 2
    assert rec.alarms == [2, 4, 6]


def test_delay_property():
    rec = run_cusum(np.zeros((5, 1)), const_increments([1.0] * 5), tau=3.0, change_point=2)
    assert rec.delay == 2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=20))
def test_recursion_equals_max_form(deltas):
    S = run_cusum(np.zeros((len(deltas), 1)), const_increments(deltas), tau=math.inf).statistics
    np.testing.assert_allclose(S, cusum_max_form(deltas), rtol=0, atol=1e-12)


def test_process_matches_runner():
    rng = np.random.default_rng(0)
    p0, p1 = GmmSpec.gaussian([0.0], [[1.0]]), GmmSpec.gaussian([0.5], [[1.0]])
    X = rng.normal(size=(300, 1))
    det = CusumDetector(lambda x: p1.logpdf(x) - p0.logpdf(x))
    proc = det.process()
    S = np.concatenate([proc.feed(X[:100]), proc.feed(X[100:])])
    rec = det.run(X, tau=math.inf)
    np.testing.assert_array_equal(S, rec.statistics)


def test_process_stops_at_alarm():
    proc = CusumProcess(lambda X: np.ones(len(X)))
    out = proc.feed(np.zeros((10, 1)), threshold=3.0)
    assert out.tolist() == [1.0, 2.0, 3.0] and proc.alarm_time == 3


def test_shewhart_does_not_accumulate():
    det = ShewhartDetector(lambda x: np.sum(np.atleast_2d(x) ** 2, axis=1))
    rec = det.run(np.array([[1.0], [1.0], [3.0]]), tau=4.0)
    assert rec.statistics.tolist() == [1.0, 1.0, 9.0] and rec.stopping_time == 3


def test_online_warmup_holds_zero():
    m = init_model(1, 4, 1.0, seed=0)
    cfg = TrainConfig(learning_rate=0.0, optimizer="gd")
    rec = run_online(np.ones((15, 1)), m, m, tau=math.inf, w=5, train_cfg=cfg, seed=0)
    assert rec.statistics[:5].tolist() == [0.0] * 5
    assert len(rec.increments) == 10


def test_online_no_alarm_during_warmup():
    m = init_model(1, 4, 1.0, seed=0)
    cfg = TrainConfig(learning_rate=0.0, optimizer="gd")
    rec = run_online(np.ones((8, 1)), m, m, tau=0.0, w=5, train_cfg=cfg, seed=0)
    assert rec.stopping_time == 6


def test_online_zero_lr_equals_offline():
    rng = np.random.default_rng(1)
    s0, s1 = init_model(2, 6, 1.0, seed=1), init_model(2, 6, 1.0, seed=2)
    X = rng.normal(size=(50, 2))
    cfg = TrainConfig(learning_rate=0.0, optimizer="gd")
    on = run_online(X, s0, s1, tau=math.inf, w=1, train_cfg=cfg, seed=0)
    off = run_offline(X, s0, s1, tau=math.inf)
    assert on.increments == off.increments[1:]


def test_online_detector_is_seeded():
    rng = np.random.default_rng(2)
    s0 = init_model(1, 4, 1.0, seed=0)
    cfg = TrainConfig(learning_rate=1e-3, optimizer="gd")
    det = OnlineDetector(s0, s0, 3, cfg, steps=2)
    X = rng.normal(size=(30, 1)) + 2
    a, b = det.run(X, math.inf, seed=5), det.run(X, math.inf, seed=5)
    assert a.statistic_trace == b.statistic_trace


def test_window_size_validated():
    m = init_model(1, 4, 1.0, seed=0)
    with pytest.raises(InputError):
        OnlineDetector(m, m, 0, TrainConfig())


def test_cusum_update():
    assert cusum_update(-3.0, 1.0) == 1.0
    assert cusum_update(2.0, -1.0) == 1.0


def test_analytic_mean_shift_detects():
    p0, p1 = GmmSpec.gaussian([0.0], [[1.0]]), GmmSpec.gaussian([2.0], [[1.0]])
    X = np.vstack([p0.sample(50, np.random.default_rng(0)), p1.sample(200, np.random.default_rng(1))])
    rec = run_offline(X, p0, p1, tau=10.0, change_point=51)
    assert rec.alarm_raised and rec.stopping_time > 50

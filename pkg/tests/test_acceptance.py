"""Acceptance checks 1-11.

Each check prints one ``CRITERION n: PASS|FAIL ...`` line (visible with
``pytest -s`` or by running this file directly) and asserts the outcome.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import cusum_max_form, fd_jacobian_trace, fd_param_grad, lnis, random_model  # noqa: E402
from scorecusum.baselines import em_fit, fit_gaussian_mle, run_em  # noqa: E402
from scorecusum.calibration import (  # noqa: E402
    CalibrationConfig,
    EvalConfig,
    calibrate_threshold,
    estimate_arl,
    sigma_tradeoff,
    tradeoff_curve,
)
from scorecusum.cli import SIGMA_TRAIN, default_sigma_target, main  # noqa: E402
from scorecusum.datagen import ring_gmm_spec  # noqa: E402
from scorecusum.detector import run_cusum, run_offline, run_online  # noqa: E402
from scorecusum.methods import MethodSpec, build_method  # noqa: E402
from scorecusum.scorenet import (  # noqa: E402
    TrainConfig,
    dsm_grad,
    dsm_loss,
    init_model,
    sm_grad,
    sm_loss,
    train_offline,
)
from scorecusum.statistics import GmmSpec, hyvarinen_score  # noqa: E402

SIGMAS = [0.05, 0.1, 0.25, 0.5, 1.0]


def report(n: int, passed: bool, detail: str, started: float, budget: float) -> bool:
    elapsed = time.time() - started
    ok = passed and elapsed < budget
    print(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f}s of {budget:.0f}s)", flush=True)
    return ok


def _norm_rel(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))


def criterion_1() -> bool:
    t0 = time.time()
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(1000 + i)
        d, h, n, K = rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 4)
        model = random_model(rng, d, h, sigma=rng.uniform(0.3, 1.5), standardize=bool(i % 2))
        X = rng.normal(size=(n, d))
        E = rng.normal(scale=model.noise_scale, size=(n, K, d))
        worst = max(worst, _norm_rel(dsm_grad(model, X, E).as_tuple(), fd_param_grad(lambda m: dsm_loss(m, X, E), model)))
        worst = max(worst, _norm_rel(sm_grad(model, X).as_tuple(), fd_param_grad(lambda m: sm_loss(m, X), model)))
    return report(1, worst < 1e-5, f"max relative error {worst:.2e} < 1e-5", t0, 10)


def criterion_2() -> bool:
    t0 = time.time()
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(2000 + i)
        d, h = rng.integers(1, 5), rng.integers(1, 17)
        model = random_model(rng, d, h, standardize=bool(i % 2))
        x = rng.normal(size=d)
        worst = max(worst, abs(model.divergence(x) - fd_jacobian_trace(model.score, x)))
    return report(2, worst < 1e-5, f"max abs error {worst:.2e} < 1e-5", t0, 5)


def criterion_3() -> bool:
    t0 = time.time()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        L = int(rng.integers(1, 21))
        deltas = rng.normal(scale=rng.uniform(0.1, 5.0), size=L) + rng.normal()
        it = iter(deltas.tolist())
        S = run_cusum(np.zeros((L, 1)), lambda x: next(it), tau=math.inf).statistics
        worst = max(worst, float(np.max(np.abs(S - cusum_max_form(deltas.tolist())))))
    return report(3, worst <= 1e-12, f"max deviation {worst:.1e} <= 1e-12", t0, 5)


FISHER_PAIRS = [
    (GmmSpec.gaussian([0.0], [[1.0]]), GmmSpec([0.4, 0.6], [[-1.0], [1.5]], [[[0.5]], [[1.2]]])),
    (GmmSpec([0.5, 0.5], [[-2.0], [2.0]], [[[0.25]], [[0.25]]]), GmmSpec.gaussian([0.5], [[2.0]])),
    (
        GmmSpec([0.3, 0.7], [[0.0, 1.0], [2.0, -1.0]], [np.eye(2), [[1.0, 0.3], [0.3, 0.5]]]),
        GmmSpec([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.5]], [[[0.8, 0.0], [0.0, 1.5]], np.eye(2)]),
    ),
]


def criterion_4() -> bool:
    t0 = time.time()
    ok = True
    parts = []
    for i, (p, q) in enumerate(FISHER_PAIRS):
        X = p.sample(200_000, np.random.default_rng(40 + i))
        lhs = hyvarinen_score(q, X) - hyvarinen_score(p, X)
        fisher = np.sum((p.score(X) - q.score(X)) ** 2, axis=1)
        diff = lhs - 0.5 * fisher
        se = diff.std(ddof=1) / np.sqrt(diff.size)
        ok &= abs(diff.mean()) <= 3 * se
        parts.append(f"pair {i}: E[dH]={lhs.mean():.4f}, half-Fisher={0.5 * fisher.mean():.4f}, unscaled={fisher.mean():.4f}")
    return report(4, ok, "; ".join(parts), t0, 30)


def _percentile_grid(spec: GmmSpec, n=200):
    lo, hi = np.quantile(spec.sample(100_000, np.random.default_rng(55)), [0.05, 0.95])
    return np.linspace(lo, hi, n)[:, None]


def criterion_5() -> bool:
    t0 = time.time()
    target, sigma = default_sigma_target(), 0.5
    X = target.sample(2000, np.random.default_rng(5))
    model = train_offline(X, TrainConfig(epochs=2000, hidden_dim=128, sigma=sigma, seed=5))
    perturbed = target.perturb(sigma)
    grid = _percentile_grid(perturbed)
    mae = float(np.mean(np.abs(model.score(grid) - perturbed.score(grid))))
    return report(5, mae < 0.15, f"MAE {mae:.4f} < 0.15", t0, 180)


def criterion_6() -> bool:
    t0 = time.time()
    target = default_sigma_target()
    good = 0
    lines = []
    for seed in range(5):
        cfg = replace(SIGMA_TRAIN, seed=seed)
        rows = sigma_tradeoff(target, SIGMAS, cfg, n_train=2000, n_eval=20_000, seed=seed)
        est = [r["eps_est"] for r in rows]
        pert = [r["eps_pert"] for r in rows]
        comb = [r["combined"] for r in rows]
        a = lnis(est) >= 4
        b = all(y > x for x, y in zip(pert, pert[1:]))
        c = 0 < int(np.argmin(comb)) < len(SIGMAS) - 1
        good += a and b and c
        lines.append(f"seed {seed}: est {np.round(est, 3).tolist()} min at sigma={SIGMAS[int(np.argmin(comb))]}")
    for line in lines:
        print("   ", line)
    return report(6, good >= 4, f"{good}/5 seeds show the trend", t0, 900)


def criterion_7() -> bool:
    t0 = time.time()
    p0, p1 = GmmSpec.gaussian([0.0], [[1.0]]), GmmSpec.gaussian([1.0], [[1.0]])
    from scorecusum.baselines import score_cusum

    det = score_cusum(p0, p1)
    pre = lambda r, n: p0.sample(n, r)
    ok = True
    parts = []
    for gamma in (2000, 5000):
        cal = calibrate_threshold(det, pre, CalibrationConfig(gamma, n_iter=200, horizon=1000, seed=7))
        arl = estimate_arl(det, pre, cal.threshold, runs=200, cap=10 * gamma, seed=8)
        ok &= 0.5 * gamma <= arl.mean <= 2 * gamma
        parts.append(f"gamma={gamma}: tau={cal.threshold:.3f}, ARL={arl.mean:.0f} (censored {arl.n_censored})")
    return report(7, ok, "; ".join(parts), t0, 600)


def criterion_8() -> bool:
    t0 = time.time()
    p0, p1 = ring_gmm_spec("pre"), ring_gmm_spec("post")
    r0, r1 = (np.random.default_rng(s) for s in np.random.SeedSequence(8).spawn(2))
    D0, D1 = p0.sample(1000, r0), p1.sample(1000, r1)
    pre, post = (lambda r, n: p0.sample(n, r)), (lambda r, n: p1.sample(n, r))
    train = TrainConfig(epochs=2000, hidden_dim=256, sigma=1.0, seed=8)
    gammas = [1000, 2000, 5000]
    curves = {}
    for name in ("exact-scusum", "dsm-cusum", "sm-scusum", "gaussian-cusum"):
        built = build_method(MethodSpec(name, train=train), D0, D1, p0, p1)
        curves[name] = tradeoff_curve(built.detector, pre, post, gammas, EvalConfig(wadd_runs=200, seed=8))

    def holds(a, b):
        return sum(ra["wadd"] <= rb["wadd"] + max(ra["wadd_se"], rb["wadd_se"]) for ra, rb in zip(curves[a], curves[b]))

    checks = {
        "exact<=dsm": holds("exact-scusum", "dsm-cusum"),
        "dsm<=sm": holds("dsm-cusum", "sm-scusum"),
        "dsm<=gaussian": holds("dsm-cusum", "gaussian-cusum"),
    }
    wadds = {k: [round(r["wadd"], 2) for r in v] for k, v in curves.items()}
    print("    WADD by method:", wadds)
    detail = ", ".join(f"{k} {v}/3" for k, v in checks.items())
    return report(8, all(v >= 2 for v in checks.values()), detail, t0, 2700)


def criterion_9() -> bool:
    t0 = time.time()
    rng = np.random.default_rng(9)
    s0, s1 = init_model(2, 16, 1.0, seed=90), init_model(2, 16, 1.0, seed=91)
    X = rng.normal(size=(500, 2))
    w = 10
    on = run_online(X, s0, s1, math.inf, w, TrainConfig(learning_rate=0.0, optimizer="gd"), steps=5, seed=9)
    off = run_offline(X, s0, s1, math.inf)
    same = on.increments == off.increments[w:]
    return report(9, same, f"{len(on.increments)} post-warm-up increments identical: {same}", t0, 60)


def criterion_10() -> bool:
    t0 = time.time()
    monotone = True
    for s in range(10):
        rng = np.random.default_rng(100 + s)
        k, d = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        X = np.vstack([rng.normal(rng.normal(0, 4, d), rng.uniform(0.3, 2.0), (150, d)) for _ in range(k)])
        fit = em_fit(X, k + 1, iters=200, seed=s)
        monotone &= bool(np.all(np.diff(fit.log_likelihoods) >= 0))
    X = np.random.default_rng(110).normal(size=(500, 3)) @ np.diag([1.0, 2.0, 0.5])
    g = em_fit(X, 1, seed=0).spec
    p = fit_gaussian_mle(X)
    gap = max(np.max(np.abs(g.means[0] - p.mean)), np.max(np.abs(g.covariances[0] - p.cov)))
    return report(10, monotone and gap <= 1e-6, f"monotone on 10 datasets: {monotone}; n=1 gap {gap:.1e}", t0, 60)


def _run_cli(*args):
    code = main([str(a) for a in args])
    if code != 0:
        raise RuntimeError(f"command failed with exit code {code}: {args}")


def _snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def criterion_11(root: Path) -> bool:
    t0 = time.time()
    d = root / "ring"

    def offline_workflow():
        _run_cli("datagen", "--out-dir", d, "--n-pre", 300, "--n-post", 300, "--seed", 11)
        for role in ("pre", "post"):
            _run_cli("train", "--data", d / f"{role}.csv", "--out", d / f"{role}_model.json",
                     "--hidden-dim", 16, "--epochs", 30, "--seed", 11)
        model_args = ["--method", "dsm-cusum", "--pre-model", d / "pre_model.json", "--post-model", d / "post_model.json"]
        _run_cli("calibrate", *model_args, "--pre-spec", d / "pre_spec.json", "--gamma", 500,
                 "--n-iter", 20, "--horizon", 200, "--out", d / "cal.json", "--seed", 11)
        _run_cli("detect", *model_args, "--stream", d / "post.csv", "--calibration", d / "cal.json",
                 "--out-dir", d / "run", "--seed", 11)

    def evaluate_workflow():
        _run_cli("evaluate", "--methods", "exact-cusum", "gmm-cusum", "hotelling", "dsm-cusum-online",
                 "--gammas", 200, 400, "--n-iter", 10, "--horizon", 100, "--wadd-runs", 5, "--wadd-cap", 500,
                 "--n-ref", 200, "--gmm-components", 4, "--em-iters", 30, "--hidden-dim", 8, "--epochs", 10,
                 "--out-dir", root / "eval", "--seed", 12)

    def nn_workflow():
        _run_cli("datagen", "--dataset", "nn", "--out-dir", root / "nn", "--n-pre", 100, "--n-post", 100,
                 "--match-steps", 30, "--seed", 13)
        _run_cli("sigma-tradeoff", "--sigmas", 0.1, 0.5, "--n-train", 100, "--n-eval", 500, "--epochs", 10,
                 "--hidden-dim", 8, "--out", root / "nn" / "sigma.csv", "--seed", 13)

    identical = []
    for flow, sub in ((offline_workflow, d), (evaluate_workflow, root / "eval"), (nn_workflow, root / "nn")):
        flow()
        first = _snapshot(sub)
        flow()
        identical.append(first == _snapshot(sub) and len(first) > 0)
    return report(11, all(identical), f"byte-identical reruns per workflow: {identical}", t0, 300)


# -- pytest entry points -----------------------------------------------------


def _check(fn, *args):
    assert fn(*args)


def test_criterion_1_gradients():
    _check(criterion_1)


def test_criterion_2_divergence():
    _check(criterion_2)


def test_criterion_3_cusum_max_form():
    _check(criterion_3)


def test_criterion_4_score_difference_identity():
    _check(criterion_4)


def test_criterion_5_score_learning():
    _check(criterion_5)


@pytest.mark.slow
def test_criterion_6_noise_tradeoff():
    _check(criterion_6)


def test_criterion_7_calibration_round_trip():
    _check(criterion_7)


@pytest.mark.slow
def test_criterion_8_delay_ordering():
    _check(criterion_8)


def test_criterion_9_online_offline_consistency():
    _check(criterion_9)


def test_criterion_10_em_sanity():
    _check(criterion_10)


def test_criterion_11_cli_determinism(tmp_path):
    _check(criterion_11, tmp_path)


if __name__ == "__main__":
    import tempfile

    results = [f() for f in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
                             criterion_7, criterion_8, criterion_9, criterion_10)]
    with tempfile.TemporaryDirectory() as tmp:
        results.append(criterion_11(Path(tmp)))
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)

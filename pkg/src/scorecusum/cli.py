"""Command-line interface.

Every subcommand reads its options from an optional JSON file (``--config``)
and from flags; flags win. Keys in the file use the flag names with
underscores (``--n-pre`` becomes ``n_pre``); unknown keys are errors. All
randomness flows from ``--seed``. Every output file embeds the merged
configuration and the seed.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
error, 3 numeric or training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import io
from .calibration import (
    SIGMA_COLUMNS,
    TRADEOFF_COLUMNS,
    CalibrationConfig,
    EvalConfig,
    calibrate_threshold,
    format_table,
    sigma_tradeoff,
    tradeoff_curve,
)
from .baselines import score_cusum
from .datagen import NnDatasetConfig, gen_nn_dataset, ring_gmm_spec
from .detector import OnlineDetector
from .errors import DataError, InputError, NumericError
from .methods import METHODS, MethodSpec, build_method
from .scorenet import TrainConfig, train_implicit, train_offline
from .statistics import GmmSpec

log = logging.getLogger(__name__)

DEFAULT_METHODS = ["exact-scusum", "dsm-cusum", "sm-scusum", "gaussian-cusum", "gmm-cusum"]
SIGMA_GRID = [0.05, 0.1, 0.25, 0.5, 1.0]
# Plain gradient descent keeps the gradient-noise floor, which scales like
# 1/sigma; Adam's normalized steps hide it.
SIGMA_TRAIN = TrainConfig(epochs=2000, hidden_dim=128, learning_rate=2e-6, optimizer="gd")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    nargs: Optional[str] = None
    choices: Optional[tuple] = None
    flag: bool = False


SEED = Opt("seed", int, 0, "master seed")

TRAIN_OPTS = [
    Opt("hidden_dim", int, 2048, "hidden units"),
    Opt("sigma", float, 1.0, "injected noise scale"),
    Opt("epochs", int, 2000, "training epochs"),
    Opt("learning_rate", float, 3e-3, "optimizer step size"),
    Opt("noise_draws", int, 1, "noise draws per point and epoch"),
    Opt("batch_size", int, None, "minibatch size (full batch when omitted)"),
    Opt("optimizer", str, "adam", "optimizer", choices=("adam", "gd")),
    Opt("standardize", bool, False, "standardize inputs with reference statistics", flag=True),
]

METHOD_OPTS = [
    Opt("method", str, None, "detector", choices=METHODS),
    Opt("pre_model", str, None, "pre-change score model JSON"),
    Opt("post_model", str, None, "post-change score model JSON"),
    Opt("pre_spec", str, None, "pre-change mixture JSON"),
    Opt("post_spec", str, None, "post-change mixture JSON"),
    Opt("pre_ref", str, None, "pre-change reference CSV"),
    Opt("post_ref", str, None, "post-change reference CSV"),
    Opt("mean_shift", float, None, "assumed post-change mean shift (gaussian-cusum without post data)"),
    Opt("gmm_components", int, 8, "mixture components for gmm-cusum"),
    Opt("em_iters", int, 200, "EM iterations"),
    Opt("window", int, 10, "online window size"),
    Opt("online_steps", int, 5, "gradient steps per observation (online)"),
    Opt("online_lr", float, 1e-3, "online learning rate"),
] + TRAIN_OPTS

COMMANDS: dict[str, list[Opt]] = {
    "datagen": [
        Opt("dataset", str, "ring", "generator", choices=("ring", "nn")),
        Opt("n_pre", int, 1000, "pre-change rows"),
        Opt("n_post", int, 1000, "post-change rows"),
        Opt("match_steps", int, 500, "moment-matching steps (nn)"),
        Opt("match_lr", float, 1e-3, "initial moment-matching step (nn)"),
        Opt("out_dir", str, None, "output directory"),
        SEED,
    ],
    "train": [
        Opt("data", str, None, "training CSV"),
        Opt("out", str, None, "model JSON to write"),
        Opt("objective", str, "dsm", "training objective", choices=("dsm", "sm")),
    ]
    + TRAIN_OPTS
    + [SEED],
    "calibrate": METHOD_OPTS
    + [
        Opt("gamma", float, None, "target average run length"),
        Opt("n_iter", int, 200, "simulated pre-change runs"),
        Opt("horizon", int, 1000, "steps per simulated run"),
        Opt("out", str, None, "calibration JSON to write"),
        SEED,
    ],
    "detect": METHOD_OPTS
    + [
        Opt("stream", str, None, "monitoring CSV"),
        Opt("tau", float, None, "threshold"),
        Opt("calibration", str, None, "calibration JSON supplying the threshold"),
        Opt("change_point", int, None, "known change point (recorded only)"),
        Opt("resume", bool, False, "keep monitoring after an alarm", flag=True),
        Opt("out_dir", str, None, "output directory"),
        SEED,
    ],
    "evaluate": [
        Opt("dataset", str, "ring", "data source", choices=("ring", "nn", "csv")),
        Opt("methods", str, DEFAULT_METHODS, "methods to compare", nargs="+", choices=METHODS),
        Opt("pre_ref", str, None, "pre-change CSV (csv dataset)"),
        Opt("post_ref", str, None, "post-change CSV (csv dataset)"),
        Opt("n_ref", int, 1000, "reference rows per role (generated datasets)"),
        Opt("gammas", float, [1000.0, 2000.0, 5000.0], "target ARL grid", nargs="+"),
        Opt("n_iter", int, 200, "calibration runs"),
        Opt("horizon", int, 1000, "calibration horizon"),
        Opt("arl_runs", int, 0, "direct ARL runs per grid point (0 skips)"),
        Opt("arl_cap_factor", float, 10.0, "ARL run cap as a multiple of gamma"),
        Opt("wadd_runs", int, 200, "delay runs per grid point"),
        Opt("wadd_cap", int, 20000, "delay run cap"),
        Opt("change_point", int, 1, "change point for delay runs"),
        Opt("mean_shift", float, None, "assumed mean shift for gaussian-cusum"),
        Opt("gmm_components", int, 8, "mixture components for gmm-cusum"),
        Opt("em_iters", int, 200, "EM iterations"),
        Opt("window", int, 10, "online window size"),
        Opt("online_steps", int, 5, "gradient steps per observation (online)"),
        Opt("online_lr", float, 1e-3, "online learning rate"),
        Opt("out_dir", str, None, "output directory"),
    ]
    + TRAIN_OPTS
    + [SEED],
    "sigma-tradeoff": [
        Opt("target", str, None, "target mixture JSON (default: 1-D two-component mixture)"),
        Opt("sigmas", float, SIGMA_GRID, "noise scales", nargs="+"),
        Opt("n_train", int, 2000, "training sample size"),
        Opt("n_eval", int, 20000, "evaluation sample size"),
        Opt("hidden_dim", int, 128, "hidden units"),
        Opt("epochs", int, 2000, "training epochs"),
        Opt("learning_rate", float, SIGMA_TRAIN.learning_rate, "optimizer step size"),
        Opt("optimizer", str, SIGMA_TRAIN.optimizer, "optimizer", choices=("adam", "gd")),
        Opt("noise_draws", int, 1, "noise draws per point and epoch"),
        Opt("out", str, None, "CSV to write"),
        SEED,
    ],
}

REQUIRED = {
    "datagen": ("out_dir",),
    "train": ("data", "out"),
    "calibrate": ("method", "gamma", "out"),
    "detect": ("method", "stream", "out_dir"),
    "evaluate": ("out_dir",),
    "sigma-tradeoff": ("out",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scorecusum", description="Score-based CUSUM change detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, help=f"{name} workflow")
        p.add_argument("--config", help="JSON file with option values")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            kw: dict = {"dest": o.name, "default": argparse.SUPPRESS, "help": o.help}
            if o.flag:
                p.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
                continue
            kw["type"] = o.type
            if o.nargs:
                kw["nargs"] = o.nargs
            if o.choices:
                kw["choices"] = o.choices
            p.add_argument(flag, **kw)
    return parser


def _coerce(o: Opt, value):
    if value is None:
        return None
    if o.nargs:
        if not isinstance(value, list):
            value = [value]
        return [_coerce(replace(o, nargs=None), v) for v in value]
    if o.flag:
        if not isinstance(value, bool):
            raise UsageError(f"option {o.name!r} must be true or false")
        return value
    try:
        out = o.type(value)
    except (TypeError, ValueError):
        raise UsageError(f"option {o.name!r}: cannot interpret {value!r}") from None
    if o.choices and out not in o.choices:
        raise UsageError(f"option {o.name!r} must be one of {', '.join(o.choices)}")
    return out


def resolve_config(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags."""
    opts = {o.name: o for o in COMMANDS[command]}
    cfg = {name: (list(o.default) if isinstance(o.default, list) else o.default) for name, o in opts.items()}
    path = getattr(ns, "config", None)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(opts))
        if unknown:
            raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        for k, v in file_cfg.items():
            cfg[k] = _coerce(opts[k], v)
    for name in opts:
        if hasattr(ns, name):
            cfg[name] = getattr(ns, name)
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def _provenance(command: str, cfg: dict) -> dict:
    return {"command": command, "config": cfg, "seed": cfg.get("seed")}


def _child_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        noise_draws=cfg["noise_draws"],
        sigma=cfg["sigma"],
        optimizer=cfg["optimizer"],
        batch_size=cfg["batch_size"],
        seed=seed,
        hidden_dim=cfg["hidden_dim"],
        standardize=cfg["standardize"],
    )


def _method_spec(cfg: dict, method: str) -> MethodSpec:
    return MethodSpec(
        method,
        train=_train_config(cfg, cfg["seed"]),
        gmm_components=cfg["gmm_components"],
        em_iters=cfg["em_iters"],
        window=cfg["window"],
        online_steps=cfg["online_steps"],
        online_learning_rate=cfg["online_lr"],
        mean_shift=cfg["mean_shift"],
    )


def _load_optional(path, loader):
    return None if path is None else loader(path)


def _csv_data(path):
    return None if path is None else io.read_csv(path)[0]


def detector_from_config(cfg: dict):
    """Build the configured detector from model files, mixtures or reference data."""
    method = cfg["method"]
    pre_model = _load_optional(cfg["pre_model"], io.load_model)
    post_model = _load_optional(cfg["post_model"], io.load_model)
    if method == "dsm-cusum-online" and pre_model is not None:
        online = TrainConfig(
            learning_rate=cfg["online_lr"], optimizer="gd", noise_draws=cfg["noise_draws"], sigma=pre_model.noise_scale
        )
        init = post_model if post_model is not None else pre_model
        return OnlineDetector(pre_model, init, cfg["window"], online, cfg["online_steps"])
    if method in ("dsm-cusum", "sm-scusum") and (pre_model is not None or post_model is not None):
        if pre_model is None or post_model is None:
            raise UsageError(f"{method} needs both --pre-model and --post-model")
        return score_cusum(pre_model, post_model)
    built = build_method(
        _method_spec(cfg, method),
        _csv_data(cfg["pre_ref"]),
        _csv_data(cfg["post_ref"]),
        _load_optional(cfg["pre_spec"], io.load_gmm),
        _load_optional(cfg["post_spec"], io.load_gmm),
    )
    return built.detector


def _bootstrap_sampler(X: np.ndarray):
    def sample(rng, n):
        return X[rng.integers(0, X.shape[0], size=n)]

    return sample


def _spec_sampler(spec: GmmSpec):
    return lambda rng, n: spec.sample(n, rng)


def pre_sampler_from_config(cfg: dict):
    if cfg["pre_spec"] is not None:
        return _spec_sampler(io.load_gmm(cfg["pre_spec"]))
    if cfg["pre_ref"] is not None:
        return _bootstrap_sampler(io.read_csv(cfg["pre_ref"])[0])
    raise UsageError("calibration needs --pre-spec (sampled) or --pre-ref (resampled)")


# -- commands -----------------------------------------------------------------


def cmd_datagen(cfg: dict) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    prov = _provenance("datagen", cfg)
    seed = cfg["seed"]
    if cfg["dataset"] == "ring":
        p0, p1 = ring_gmm_spec("pre"), ring_gmm_spec("post")
        r0, r1 = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        pre, post = p0.sample(cfg["n_pre"], r0), p1.sample(cfg["n_post"], r1)
        io.save_gmm(p0, out / "pre_spec.json", prov)
        io.save_gmm(p1, out / "post_spec.json", prov)
        description = {"generator": "ring", "pre": io.gmm_to_dict(p0), "post": io.gmm_to_dict(p1)}
    else:
        nn_cfg = NnDatasetConfig(
            match_steps=cfg["match_steps"],
            match_lr=cfg["match_lr"],
            n_pre=cfg["n_pre"],
            n_post=cfg["n_post"],
            seed_pre=_child_seed(seed, 0),
            seed_post=_child_seed(seed, 1),
            seed_latent=_child_seed(seed, 2),
            seed_samples=_child_seed(seed, 3),
        )
        ds = gen_nn_dataset(nn_cfg)
        pre, post = ds.pre, ds.post
        description = {"generator": "nn", **ds.description()}
    cols = [f"x{i}" for i in range(pre.shape[1])]
    io.write_csv(out / "pre.csv", pre, cols, prov)
    io.write_csv(out / "post.csv", post, cols, prov)
    io.dump_json({"format": "scorecusum.dataset/v1", **description, "provenance": prov}, out / "description.json")
    print(f"wrote {len(pre)} pre-change and {len(post)} post-change rows to {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    X, _ = io.read_csv(cfg["data"])
    tc = _train_config(cfg, cfg["seed"])
    trainer = train_offline if cfg["objective"] == "dsm" else train_implicit
    model, losses = trainer(X, tc, return_trace=True)
    io.save_model(model, cfg["out"], _provenance("train", cfg))
    if losses:
        print(f"final loss: {losses[-1]!r}")
    else:
        print("epochs=0: wrote the initial model")
    return 0


def _calibration_config(cfg: dict) -> CalibrationConfig:
    return CalibrationConfig(cfg["gamma"], cfg["n_iter"], cfg["horizon"], cfg["seed"])


def cmd_calibrate(cfg: dict) -> int:
    detector = detector_from_config(cfg)
    sampler = pre_sampler_from_config(cfg)
    result = calibrate_threshold(detector, sampler, _calibration_config(cfg))
    doc = {"format": io.CALIBRATION_FORMAT, **result.to_dict(), "provenance": _provenance("calibrate", cfg)}
    io.dump_json(doc, cfg["out"])
    print(f"threshold: {result.threshold!r} (quantile level {result.quantile_level!r})")
    return 0


def _threshold(cfg: dict) -> float:
    if (cfg["tau"] is None) == (cfg["calibration"] is None):
        raise UsageError("give exactly one of --tau and --calibration")
    if cfg["tau"] is not None:
        tau = float(cfg["tau"])
    else:
        tau = float(io.load_json(cfg["calibration"], io.CALIBRATION_FORMAT)["threshold"])
    if not math.isfinite(tau):
        raise UsageError(f"threshold must be finite, got {tau}")
    return tau


def cmd_detect(cfg: dict) -> int:
    tau = _threshold(cfg)
    X, _ = io.read_csv(cfg["stream"])
    detector = detector_from_config(cfg)
    record = detector.run(X, tau, change_point=cfg["change_point"], seed=cfg["seed"], resume=cfg["resume"])
    out = io.ensure_dir(cfg["out_dir"])
    io.write_run_record(record, out / "run.csv", out / "run.json", _provenance("detect", cfg))
    if record.alarm_raised:
        print(f"alarm at t={record.stopping_time} (threshold {tau!r})")
    else:
        print(f"no alarm in {record.n_observed} observations")
    return 0


def _evaluation_data(cfg: dict):
    """Reference sets, samplers and (when known) true mixtures for evaluate."""
    seed = cfg["seed"]
    if cfg["dataset"] == "ring":
        p0, p1 = ring_gmm_spec("pre"), ring_gmm_spec("post")
        r0, r1 = (np.random.default_rng(s) for s in np.random.SeedSequence([seed, 0]).spawn(2))
        D0, D1 = p0.sample(cfg["n_ref"], r0), p1.sample(cfg["n_ref"], r1)
        return D0, D1, _spec_sampler(p0), _spec_sampler(p1), p0, p1
    if cfg["dataset"] == "nn":
        ds = gen_nn_dataset(
            NnDatasetConfig(
                n_pre=cfg["n_ref"],
                n_post=cfg["n_ref"],
                seed_pre=_child_seed(seed, 0),
                seed_post=_child_seed(seed, 1),
                seed_latent=_child_seed(seed, 2),
                seed_samples=_child_seed(seed, 3),
            )
        )
        return ds.pre, ds.post, (lambda r, n: ds.sample("pre", n, r)), (lambda r, n: ds.sample("post", n, r)), None, None
    if cfg["pre_ref"] is None or cfg["post_ref"] is None:
        raise UsageError("the csv dataset needs --pre-ref and --post-ref")
    D0, D1 = io.read_csv(cfg["pre_ref"])[0], io.read_csv(cfg["post_ref"])[0]
    return D0, D1, _bootstrap_sampler(D0), _bootstrap_sampler(D1), None, None


def cmd_evaluate(cfg: dict) -> int:
    D0, D1, pre, post, p0, p1 = _evaluation_data(cfg)
    ecfg = EvalConfig(
        n_iter=cfg["n_iter"],
        horizon=cfg["horizon"],
        arl_runs=cfg["arl_runs"],
        arl_cap_factor=cfg["arl_cap_factor"],
        wadd_runs=cfg["wadd_runs"],
        wadd_cap=cfg["wadd_cap"],
        change_point=cfg["change_point"],
        seed=cfg["seed"],
    )
    out = io.ensure_dir(cfg["out_dir"])
    prov = _provenance("evaluate", cfg)
    gammas = sorted(cfg["gammas"])
    for method in cfg["methods"]:
        built = build_method(_method_spec(cfg, method), D0, D1, p0, p1)
        rows = tradeoff_curve(built.detector, pre, post, gammas, ecfg)
        label = built.spec.label
        io.write_table_csv(out / f"tradeoff_{label}.csv", rows, TRADEOFF_COLUMNS, prov)
        print(label)
        print(format_table(rows, TRADEOFF_COLUMNS))
    return 0


def default_sigma_target() -> GmmSpec:
    """Equal mixture of N(-2, 1) and N(2, 1)."""
    return GmmSpec([0.5, 0.5], [[-2.0], [2.0]], [[[1.0]], [[1.0]]])


def cmd_sigma_tradeoff(cfg: dict) -> int:
    target = default_sigma_target() if cfg["target"] is None else io.load_gmm(cfg["target"])
    tc = TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        optimizer=cfg["optimizer"],
        noise_draws=cfg["noise_draws"],
        hidden_dim=cfg["hidden_dim"],
        seed=cfg["seed"],
    )
    rows = sigma_tradeoff(target, cfg["sigmas"], tc, cfg["n_train"], cfg["n_eval"], seed=cfg["seed"])
    io.write_table_csv(cfg["out"], rows, SIGMA_COLUMNS, _provenance("sigma-tradeoff", cfg))
    print(format_table(rows, SIGMA_COLUMNS))
    return 0


HANDLERS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "sigma-tradeoff": cmd_sigma_tradeoff,
}


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(ns.command, ns)
        return HANDLERS[ns.command](cfg)
    except (UsageError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

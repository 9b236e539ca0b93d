"""Construct detectors by method name from reference data (and true specs when needed)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .baselines import (
    em_fit_gmm,
    exact_cusum,
    fit_gaussian_mle,
    gaussian_cusum,
    gmm_cusum,
    hotelling_chart,
    hotelling_reference,
    score_cusum,
    sm_ablation_train,
)
from .detector import OnlineDetector
from .errors import InputError
from .scorenet import TrainConfig, train_offline
from .statistics import GmmSpec

METHODS = (
    "dsm-cusum",
    "dsm-cusum-online",
    "sm-scusum",
    "gaussian-cusum",
    "gmm-cusum",
    "exact-cusum",
    "exact-scusum",
    "hotelling",
)


@dataclass(frozen=True)
class MethodSpec:
    """Everything needed to build one detector besides the data."""

    name: str
    train: TrainConfig = TrainConfig()
    sm_train: Optional[TrainConfig] = None
    gmm_components: int = 8
    em_iters: int = 200
    window: int = 10
    online_steps: int = 5
    online_learning_rate: float = 1e-3
    mean_shift: Optional[float] = None

    def __post_init__(self):
        if self.name not in METHODS:
            raise InputError(f"unknown method {self.name!r}; choose from {', '.join(METHODS)}")

    @property
    def label(self) -> str:
        return f"gmm{self.gmm_components}-cusum" if self.name == "gmm-cusum" else self.name


@dataclass
class BuiltMethod:
    spec: MethodSpec
    detector: object
    fitted: dict = field(default_factory=dict)


def _seeded(cfg: TrainConfig, offset: int) -> TrainConfig:
    return replace(cfg, seed=int(np.random.SeedSequence([cfg.seed, offset]).generate_state(1)[0]))


def _post_gaussian(spec: MethodSpec, pre_data, post_data):
    if post_data is not None:
        return fit_gaussian_mle(post_data)
    if spec.mean_shift is None:
        raise InputError("gaussian-cusum needs post-change reference data or a mean shift")
    p0 = fit_gaussian_mle(pre_data)
    shift = np.full(p0.dim, float(spec.mean_shift))
    return type(p0)(p0.mean + shift, p0.cov)


def build_method(
    spec: MethodSpec,
    pre_data=None,
    post_data=None,
    pre_spec: Optional[GmmSpec] = None,
    post_spec: Optional[GmmSpec] = None,
) -> BuiltMethod:
    """Fit whatever the method needs and return its detector.

    Offline methods require both reference sets; the online method and
    Hotelling's chart only use ``pre_data``; the exact methods use the true
    mixtures instead of data.
    """
    name = spec.name
    if name in ("exact-cusum", "exact-scusum"):
        if pre_spec is None or post_spec is None:
            raise InputError(f"{name} needs the true pre- and post-change mixtures")
        det = exact_cusum(pre_spec, post_spec) if name == "exact-cusum" else score_cusum(pre_spec, post_spec)
        return BuiltMethod(spec, det, {"pre": pre_spec, "post": post_spec})
    if pre_data is None:
        raise InputError(f"{name} needs pre-change reference data")
    if name == "hotelling":
        ref = hotelling_reference(pre_data)
        return BuiltMethod(spec, hotelling_chart(ref), {"reference": ref})
    if name == "gaussian-cusum":
        p0 = fit_gaussian_mle(pre_data)
        p1 = _post_gaussian(spec, pre_data, post_data)
        return BuiltMethod(spec, gaussian_cusum(p0, p1), {"pre": p0, "post": p1})
    if name == "dsm-cusum-online":
        s0 = train_offline(pre_data, _seeded(spec.train, 0))
        online_cfg = replace(spec.train, optimizer="gd", learning_rate=spec.online_learning_rate)
        det = OnlineDetector(s0, s0, spec.window, online_cfg, spec.online_steps)
        return BuiltMethod(spec, det, {"pre": s0})
    if post_data is None:
        raise InputError(f"{name} needs post-change reference data")
    if name == "gmm-cusum":
        g0 = em_fit_gmm(pre_data, spec.gmm_components, spec.em_iters, seed=spec.train.seed)
        g1 = em_fit_gmm(post_data, spec.gmm_components, spec.em_iters, seed=spec.train.seed + 1)
        return BuiltMethod(spec, gmm_cusum(g0, g1), {"pre": g0, "post": g1})
    if name == "dsm-cusum":
        s0 = train_offline(pre_data, _seeded(spec.train, 0))
        s1 = train_offline(post_data, _seeded(spec.train, 1))
        return BuiltMethod(spec, score_cusum(s0, s1), {"pre": s0, "post": s1})
    if name == "sm-scusum":
        cfg = spec.sm_train or spec.train
        s0 = sm_ablation_train(pre_data, _seeded(cfg, 0))
        s1 = sm_ablation_train(post_data, _seeded(cfg, 1))
        return BuiltMethod(spec, score_cusum(s0, s1), {"pre": s0, "post": s1})
    raise InputError(f"unhandled method {name!r}")  # pragma: no cover

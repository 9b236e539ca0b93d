"""File formats: stream CSVs and JSON documents for models, mixtures and results.

CSV streams have an optional block of ``#`` comment lines (provenance), one
header row of column names, then one row per time step. A column named
``t`` is an index and is dropped on read. Floats are written in shortest
round-trip form, so write-then-read is exact.

JSON documents carry a ``format`` tag:

``scorecusum.score_model/v1``
    ``input_dim``, ``hidden_dim``, ``activation``, ``sigma``,
    ``standardization`` (``{"loc": [...], "scale": [...]}`` or null),
    ``W1`` (hidden x input), ``b1``, ``W2`` (input x hidden), ``b2``.
``scorecusum.gmm/v1``
    ``weights``, ``means`` (k x d), ``covariances`` (k x d x d).
``scorecusum.gaussian/v1``
    ``mean``, ``cov``.
``scorecusum.calibration/v1``
    ``threshold``, ``quantile_level``, ``config``, ``maxima``.
``scorecusum.run/v1``
    ``change_point``, ``stopping_time``, ``alarm_raised``, ``n_observed``,
    ``n_clipped``, ``alarms``, ``final_statistic``.

Any document may also hold a ``provenance`` object (config echo and seed).
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .scorenet import ScoreModel
from .statistics import GmmSpec

MODEL_FORMAT = "scorecusum.score_model/v1"
GMM_FORMAT = "scorecusum.gmm/v1"
GAUSSIAN_FORMAT = "scorecusum.gaussian/v1"
CALIBRATION_FORMAT = "scorecusum.calibration/v1"
RUN_FORMAT = "scorecusum.run/v1"


def fmt_float(v: float) -> str:
    return repr(float(v))


def write_csv(path, X, columns: Optional[Sequence[str]] = None, provenance: Optional[dict] = None, index: bool = False):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0 and X.ndim == 2 and columns is not None:
        X = X.reshape(0, len(columns))
    d = X.shape[1]
    columns = list(columns) if columns is not None else [f"x{i}" for i in range(d)]
    if len(columns) != d:
        raise ValueError(f"{len(columns)} column names for {d} columns")
    lines = []
    if provenance is not None:
        lines.append("# " + json.dumps(provenance, sort_keys=True))
    lines.append(",".join((["t"] if index else []) + columns))
    for i, row in enumerate(X, start=1):
        cells = [str(i)] if index else []
        lines.append(",".join(cells + [fmt_float(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[np.ndarray, list[str]]:
    """Parse a stream CSV; errors name the offending line."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in cells]
            continue
        if len(cells) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{lineno}: non-finite value")
        rows.append(vals)
    if header is None:
        raise DataError(f"{path}: missing header row")
    X = np.array(rows, dtype=float).reshape(len(rows), len(header))
    keep = [i for i, c in enumerate(header) if c != "t"]
    return X[:, keep], [header[i] for i in keep]


def dump_json(doc: dict, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path, expected_format: Optional[str] = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if expected_format is not None and doc.get("format") != expected_format:
        raise DataError(f"{path}: expected format {expected_format!r}, found {doc.get('format')!r}")
    return doc


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model: ScoreModel) -> dict:
    std = None
    if model.loc is not None:
        std = {"loc": _tolist(model.loc), "scale": _tolist(model.scale)}
    return {
        "format": MODEL_FORMAT,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "activation": model.activation,
        "sigma": model.noise_scale,
        "standardization": std,
        "W1": _tolist(model.W1),
        "b1": _tolist(model.b1),
        "W2": _tolist(model.W2),
        "b2": _tolist(model.b2),
    }


def model_from_dict(doc: dict) -> ScoreModel:
    std = doc.get("standardization")
    d, h = int(doc["input_dim"]), int(doc["hidden_dim"])
    model = ScoreModel(
        np.array(doc["W1"], dtype=float).reshape(h, d),
        np.array(doc["b1"], dtype=float).reshape(h),
        np.array(doc["W2"], dtype=float).reshape(d, h),
        np.array(doc["b2"], dtype=float).reshape(d),
        float(doc["sigma"]),
        activation=doc.get("activation", "tanh"),
        loc=None if std is None else std["loc"],
        scale=None if std is None else std["scale"],
    )
    return model


def save_model(model: ScoreModel, path, provenance: Optional[dict] = None):
    doc = model_to_dict(model)
    if provenance is not None:
        doc["provenance"] = provenance
    dump_json(doc, path)


def load_model(path) -> ScoreModel:
    return model_from_dict(load_json(path, MODEL_FORMAT))


def gmm_to_dict(spec: GmmSpec) -> dict:
    return {
        "format": GMM_FORMAT,
        "weights": _tolist(spec.weights),
        "means": _tolist(spec.means),
        "covariances": _tolist(spec.covariances),
    }


def gmm_from_dict(doc: dict) -> GmmSpec:
    return GmmSpec(doc["weights"], doc["means"], doc["covariances"])


def save_gmm(spec: GmmSpec, path, provenance: Optional[dict] = None):
    doc = gmm_to_dict(spec)
    if provenance is not None:
        doc["provenance"] = provenance
    dump_json(doc, path)


def load_gmm(path) -> GmmSpec:
    return gmm_from_dict(load_json(path, GMM_FORMAT))


def gaussian_to_dict(params) -> dict:
    return {"format": GAUSSIAN_FORMAT, "mean": _tolist(params.mean), "cov": _tolist(params.cov)}


def gaussian_from_dict(doc: dict):
    from .baselines import GaussianParams

    return GaussianParams(doc["mean"], doc["cov"])


def write_run_record(record, csv_path, summary_path, provenance: Optional[dict] = None):
    """Statistic trace as CSV (t, S_t[, increment]) plus a JSON summary."""
    lines = []
    if provenance is not None:
        lines.append("# " + json.dumps(provenance, sort_keys=True))
    incs = record.increments
    aligned = incs is not None and len(incs) == len(record.statistic_trace)
    if incs is not None and not aligned:
        offset = len(record.statistic_trace) - len(incs)
        incs = [None] * offset + list(incs)
        aligned = True
    lines.append("t,statistic" + (",increment" if aligned else ""))
    for i, (t, s) in enumerate(record.statistic_trace):
        cells = [str(t), fmt_float(s)]
        if aligned:
            cells.append("" if incs[i] is None else fmt_float(incs[i]))
        lines.append(",".join(cells))
    Path(csv_path).write_text("\n".join(lines) + "\n")
    trace = record.statistic_trace
    summary = {
        "format": RUN_FORMAT,
        "change_point": record.change_point,
        "stopping_time": record.stopping_time,
        "alarm_raised": record.alarm_raised,
        "n_observed": record.n_observed,
        "n_clipped": record.n_clipped,
        "alarms": list(record.alarms),
        "final_statistic": trace[-1][1] if trace else 0.0,
    }
    if provenance is not None:
        summary["provenance"] = provenance
    dump_json(summary, summary_path)


def write_table_csv(path, rows: Sequence[dict], columns: Sequence[str], provenance: Optional[dict] = None):
    lines = []
    if provenance is not None:
        lines.append("# " + json.dumps(provenance, sort_keys=True))
    lines.append(",".join(columns))
    for r in rows:
        cells = []
        for c in columns:
            v = r.get(c)
            cells.append(fmt_float(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p

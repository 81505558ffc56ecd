"""JSON and CSV serialization for configs, paths and results.

Floats are written with 17 significant digits, which is enough for an exact
round trip of any IEEE double. CSV files carry a single header row.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .experiments import (
    QQ_CSV_COLUMNS,
    RECORD_CSV_COLUMNS,
    CellSummary,
    ExperimentConfig,
    MCReport,
    MethodResult,
    ReplicationRecord,
)
from . import __version__
from .mle import ConfigError
from .model import ModelSpec, ModelValidationError, ParameterDomain, StateSpace, ThetaParams
from .simulate import ObservationPath

PATH_CSV_COLUMNS = ("k", "t", "delta_x")
PATH_CSV_COLUMNS_HIDDEN = ("k", "t", "delta_x", "hidden_integral")
FILTER_CSV_COLUMNS = ("k", "t", "pi")
FILTER_CSV_COLUMNS_SENS = ("k", "t", "pi", "dpi_dlambda", "dpi_dmu")
DENSITY_CSV_COLUMNS = ("x", "f")


class SchemaError(ValueError):
    """Schema violation in a serialized document; ``field`` is a dotted path."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


# --- JSON ---------------------------------------------------------------

_FLOAT_TAG = "\x00f:"
_FLOAT_RE = re.compile(r'"\\u0000f:([^"]*)"')


def _tag_floats(obj):
    if isinstance(obj, dict):
        return {k: _tag_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tag_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            text = "NaN"
        elif math.isinf(x):
            text = "Infinity" if x > 0 else "-Infinity"
        else:
            text = format_float(x)
            if re.fullmatch(r"-?\d+", text):
                text += ".0"  # keep it a float on the way back
        return _FLOAT_TAG + text
    if isinstance(obj, np.ndarray):
        return _tag_floats(obj.tolist())
    return obj


def dumps(obj, indent: int = 2) -> str:
    """``json.dumps`` with every float rendered to 17 significant digits."""
    text = json.dumps(_tag_floats(obj), indent=indent)
    return _FLOAT_RE.sub(lambda m: m.group(1), text)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in {path}: {exc}") from exc


# --- config -------------------------------------------------------------

def config_to_dict(cfg: ExperimentConfig) -> dict:
    m = cfg.model
    return {
        "model": {
            "theta": {"lambda": m.theta.lam, "mu": m.theta.mu},
            "states": {"y1": m.states.y1, "y2": m.states.y2},
            "domain": {"c0": m.domain.c0, "c1": m.domain.c1},
        },
        "horizons": list(cfg.horizons),
        "step": cfg.step,
        "replications": cfg.replications,
        "base_seed": cfg.base_seed,
        "methods": list(cfg.methods),
        "estimation": {
            "delta_one_step": cfg.delta_one_step,
            "delta_two_step": cfg.delta_two_step,
            "output_taus": list(cfg.output_taus),
        },
    }


def _get(d: dict, key: str, where: str, kind=float, default=None, required=True):
    if not isinstance(d, dict):
        raise SchemaError("expected an object", where)
    path = f"{where}.{key}" if where else key
    if key not in d:
        if required:
            raise SchemaError("missing required field", path)
        return default
    val = d[key]
    try:
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise TypeError
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
                raise TypeError
            return int(val)
        if kind is list:
            if not isinstance(val, list):
                raise TypeError
            return val
        if kind is dict:
            if not isinstance(val, dict):
                raise TypeError
            return val
    except (TypeError, ValueError):
        raise SchemaError(f"expected {kind.__name__}, got {val!r}", path) from None
    return val


_TOP_KEYS = {"model", "horizons", "step", "replications", "base_seed", "methods", "estimation"}


def _relabel(exc, prefix):
    field = getattr(exc, "field", None)
    names = {"lambda": "theta.lambda", "mu": "theta.mu", "y1": "states.y1", "y2": "states.y2",
             "c0": "domain.c0", "c1": "domain.c1"}
    if prefix == "model" and field in names:
        return f"model.{names[field]}"
    return field or prefix


def model_from_dict(d: dict, where: str = "model") -> ModelSpec:
    th = _get(d, "theta", where, dict)
    st = _get(d, "states", where, dict)
    dom = _get(d, "domain", where, dict)
    try:
        return ModelSpec(
            ThetaParams(_get(th, "lambda", f"{where}.theta"), _get(th, "mu", f"{where}.theta")),
            StateSpace(_get(st, "y1", f"{where}.states"), _get(st, "y2", f"{where}.states")),
            ParameterDomain(_get(dom, "c0", f"{where}.domain"), _get(dom, "c1", f"{where}.domain")),
        )
    except ModelValidationError as exc:
        raise SchemaError(str(exc), _relabel(exc, "model")) from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    """Inverse of :func:`config_to_dict`; errors name the offending field."""
    if not isinstance(d, dict):
        raise SchemaError("config must be a JSON object")
    extra = set(d) - _TOP_KEYS
    if extra:
        raise SchemaError("unknown field", sorted(extra)[0])
    model = model_from_dict(_get(d, "model", "", dict))
    est = _get(d, "estimation", "", dict, default={}, required=False)
    kw = {}
    if "horizons" in d:
        kw["horizons"] = tuple(_get(d, "horizons", "", list))
    if "step" in d:
        kw["step"] = _get(d, "step", "")
    if "replications" in d:
        kw["replications"] = _get(d, "replications", "", int)
    if "base_seed" in d:
        kw["base_seed"] = _get(d, "base_seed", "", int)
    if "methods" in d:
        kw["methods"] = tuple(_get(d, "methods", "", list))
    for key in ("delta_one_step", "delta_two_step"):
        if key in est:
            kw[key] = _get(est, key, "estimation")
    if "output_taus" in est:
        kw["output_taus"] = tuple(_get(est, "output_taus", "estimation", list))
    try:
        return ExperimentConfig(model=model, **kw)
    except ConfigError as exc:
        field = exc.field
        if field in ("delta_one_step", "delta_two_step", "output_taus"):
            field = f"estimation.{field}"
        raise SchemaError(str(exc), field) from exc
    except ModelValidationError as exc:
        raise SchemaError(str(exc), _relabel(exc, "model")) from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), "config") from exc


def load_config(path) -> ExperimentConfig:
    return config_from_dict(read_json(path))


def save_config(path, cfg: ExperimentConfig) -> Path:
    return write_json(path, config_to_dict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dumps(config_to_dict(cfg), indent=None).encode()).hexdigest()[:12]


# --- CSV ----------------------------------------------------------------

def write_csv(path, columns, rows) -> Path:
    """Write dict rows (or sequences in column order) under one header row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, dict) else row
            w.writerow([_fmt_cell(v) for v in vals])
    return path


def read_csv(path, columns=None) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        if columns is not None and tuple(header) not in (
            tuple(c) for c in (columns if isinstance(columns[0], tuple) else [columns])
        ):
            raise SchemaError(f"unexpected header {header} in {path}", "header")
        return [dict(zip(header, row)) for row in r]


def write_path_csv(path, obs: ObservationPath) -> Path:
    hidden = obs.hidden_integrals is not None
    cols = PATH_CSV_COLUMNS_HIDDEN if hidden else PATH_CSV_COLUMNS
    k = np.arange(obs.n_steps)
    t = k * obs.step
    data = [k, t, obs.increments] + ([obs.hidden_integrals] if hidden else [])
    return write_csv(path, cols, zip(*data))


def read_path_csv(path, step: float | None = None) -> ObservationPath:
    """Rebuild an :class:`ObservationPath`. The step is taken from the
    ``t`` column unless given; the horizon is ``n * step``."""
    rows = read_csv(path, (PATH_CSV_COLUMNS, PATH_CSV_COLUMNS_HIDDEN))
    if not rows:
        raise SchemaError(f"{path} holds no increments", "delta_x")
    try:
        t = np.array([float(r["t"]) for r in rows])
        dx = np.array([float(r["delta_x"]) for r in rows])
        hid = (np.array([float(r["hidden_integral"]) for r in rows])
               if "hidden_integral" in rows[0] else None)
    except ValueError as exc:
        raise SchemaError(f"non-numeric entry: {exc}", "delta_x") from exc
    if step is None:
        if t.size < 2:
            raise SchemaError("cannot infer the step from a single row; pass it explicitly", "t")
        step = float(t[1] - t[0])
        # undo the rounding of k*h in the t column
        step = float(format(step, ".15g"))
    return ObservationPath(step, t.size * step, dx, 0.0, hid)


# --- results ------------------------------------------------------------

_RESULT_FLOATS = ("lambda_hat", "mu_hat", "z1", "z2", "chi2", "i11", "i12", "i22")


def records_to_rows(records) -> list[dict]:
    return [row for rec in sorted(records, key=lambda r: r.index) for row in rec.rows()]


def records_from_rows(rows: list[dict], base_seed: int) -> list[ReplicationRecord]:
    by_index: dict[int, list[MethodResult]] = {}
    for row in rows:
        idx = int(row["index"])
        sol = row["solvable"]
        res = MethodResult(
            T=int(row["T"]), method=row["method"],
            solvable=None if sol in ("", None) else bool(int(sol)),
            error=row["error"] or "",
            **{k: float(row[k]) for k in _RESULT_FLOATS},
        )
        by_index.setdefault(idx, []).append(res)
    return [ReplicationRecord(i, (base_seed, i), tuple(rs)) for i, rs in sorted(by_index.items())]


def write_records_csv(path, records) -> Path:
    return write_csv(path, RECORD_CSV_COLUMNS, records_to_rows(records))


def read_records_csv(path, base_seed: int) -> list[ReplicationRecord]:
    return records_from_rows(read_csv(path, RECORD_CSV_COLUMNS), base_seed)


def report_to_dict(report: MCReport) -> dict:
    return {
        "n_replications": report.n_replications,
        "warnings": list(report.warnings),
        "cells": [asdict(c) for c in report.cells],
    }


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def report_from_dict(d: dict, qq=()) -> MCReport:
    cells = []
    for i, c in enumerate(_get(d, "cells", "", list)):
        try:
            cells.append(CellSummary(**{k: _tuplify(v) for k, v in c.items()}))
        except TypeError as exc:
            raise SchemaError(str(exc), f"cells[{i}]") from exc
    return MCReport(tuple(cells), tuple(qq), _get(d, "n_replications", "", int),
                    tuple(d.get("warnings", ())))


def write_qq_csv(path, report: MCReport) -> Path:
    return write_csv(path, QQ_CSV_COLUMNS, report.qq)


def read_qq_csv(path) -> tuple:
    return tuple((int(r["T"]), r["method"], int(r["coordinate"]), float(r["theoretical"]),
                  float(r["sample"])) for r in read_csv(path, QQ_CSV_COLUMNS))


# --- run directories ----------------------------------------------------

def manifest(command: str, config: dict, seed=None, extra: dict | None = None) -> dict:
    out = {
        "command": command,
        "version": f"telegraph_hmm {__version__}; numpy {np.__version__}",
        "seed": seed,
        "config": config,
    }
    if extra:
        out.update(extra)
    return out


def write_manifest(run_dir, command: str, config: dict, seed=None, extra=None) -> Path:
    return write_json(Path(run_dir) / "manifest.json", manifest(command, config, seed, extra))


def make_run_dir(out_dir, tag: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    run = Path(out_dir) / f"{tag}-{stamp}"
    run.mkdir(parents=True, exist_ok=False)
    return run


def write_mc_run(out_dir, config: ExperimentConfig, records, report: MCReport) -> Path:
    run = make_run_dir(out_dir, config_hash(config))
    write_records_csv(run / "records.csv", records)
    write_json(run / "report.json", report_to_dict(report))
    write_qq_csv(run / "qq_data.csv", report)
    write_manifest(run, "mc", config_to_dict(config), seed=config.base_seed)
    return run

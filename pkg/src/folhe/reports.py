"""JSON and CSV report emission.

Every float is written with 17 significant digits so that reports round-trip
exactly. Non-finite floats become the strings ``"NaN"``, ``"Infinity"`` and
``"-Infinity"``. Apart from ``wall_clock_seconds`` a report depends only on
the configuration and seed.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
SCHEMA_PATH = Path(__file__).with_name("report_schema.json")


def _plain(obj):
    """Convert numpy scalars, arrays, tuples and paths to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _float(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    s = f"{x:.17g}"
    if all(c not in s for c in ".eEn"):
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, float):
        return _float(obj)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _encode(_plain(obj), indent, 0) + "\n"


def make_report(command: str, config: dict, *, verdicts: dict | None = None,
                tables: dict | None = None, wall_clock: float = 0.0) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "software": {"name": "folhe", "version": __version__},
        "command": command,
        "config": config,
        "verdicts": verdicts or {},
        "tables": tables or {},
        "wall_clock_seconds": float(wall_clock),
    }


def write_json(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(report))
    return path


def write_history_csv(records: list, path) -> Path:
    """Per-step continuity history; one row per accepted ``eps``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["eps", "residual", "m_eps", "log_l2", "M_eps", "rho", "estimate_violation",
              "estimate_scale", "m_bound", "det_residual", "newton_iters", "krylov_iters"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for rec in records:
            w.writerow([rec[k] if isinstance(rec.get(k), int)
                        else _float(float(rec.get(k, math.nan))).strip('"') for k in fields])
    return path


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())

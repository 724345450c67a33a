"""File formats: raw float64 tensors with a JSON sidecar, binary PGM, metric CSVs, reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import TensorFileError

CSV_HEADER = ("experiment", "metric", "value", "seed", "config_hash")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_tensor(path, tensor) -> Path:
    """Write ``tensor`` as little-endian float64 plus ``<path>.json`` describing its shape."""
    path = Path(path)
    a = np.ascontiguousarray(tensor, dtype="<f8")
    path.write_bytes(a.tobytes(order="C"))
    meta = {"shape": list(a.shape), "dtype": "f64", "order": "row-major"}
    _sidecar(path).write_text(json.dumps(meta) + "\n")
    return path


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"{path}: unreadable sidecar ({exc})") from exc
    if meta.get("dtype") != "f64" or meta.get("order") != "row-major":
        raise TensorFileError(f"{path}: unsupported sidecar {meta}")
    shape = tuple(int(s) for s in meta["shape"])
    payload = path.read_bytes()
    expected = 8 * math.prod(shape)
    if len(payload) != expected:
        raise TensorFileError(f"{path}: corrupt payload, {len(payload)} bytes but shape "
                              f"{list(shape)} needs {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def pgm_bytes(image) -> np.ndarray:
    """``round(255 * clamp(v, 0, 1))`` with halves rounded up."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def write_pgm(path, image) -> Path:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    h, w = image.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pgm_bytes(image).tobytes())
    return path


def format_value(v) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_metrics_csv(path, rows) -> Path:
    """``rows`` are ``(experiment, metric, value, seed, config_hash)`` tuples."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for exp, metric, value, seed, chash in rows:
            w.writerow((exp, metric, format_value(value), seed, chash))
    return path


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def report_to_dict(report) -> dict:
    """JSON form of a reconstruction report; tensors are stored separately."""
    return {
        "solver": report.solver,
        "seed": report.seed,
        "metrics": report.metrics,
        "config": report.config,
        "diagnostics": [
            {"t": d.t, "loss_before": d.loss_before, "loss_after": d.loss_after,
             "resampled": d.resampled, "residual": d.residual}
            for d in report.diagnostics
        ],
    }

"""
JSON and CSV files for measures, curves, liftings, laws, functionals and reports.

Every JSON document carries ``format_version``; loading a document written
with another version raises `FormatVersionMismatch`. Output is written with
sorted keys and a trailing newline so identical inputs give identical bytes.
"""

import csv
import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np

from atomics.cylinder import CylinderFn, GenCylinderFn, InteractionFn, build_functional
from atomics.dynamics import Lifting
from atomics.errors import ConfigParse, FormatVersionMismatch
from atomics.measures import AtomicMeasure, MeasureCurve, WeightSequence, make_atomic
from atomics.sampling import RandomMeasureLaw
from utils.constants import FORMAT_VERSION

logger = logging.getLogger(__name__)


def to_jsonable(obj):
    """Plain JSON types for dataclasses, numpy values and non-finite floats."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    return obj


# ---- domain objects ----

def measure_to_dict(mu: AtomicMeasure) -> dict:
    return {"type": "measure", "weights": mu.a.tolist(), "tail_mass": mu.tail_mass,
            "locations": mu.locations.tolist()}


def measure_from_dict(data: dict) -> AtomicMeasure:
    try:
        return make_atomic(data["weights"], data["locations"], float(data.get("tail_mass", 0.0)))
    except KeyError as e:
        raise ConfigParse(f"measure document is missing {e}") from e


def curve_to_dict(curve: MeasureCurve) -> dict:
    return {"type": "curve", "times": curve.times.tolist(),
            "states": [measure_to_dict(mu) for mu in curve.states]}


def curve_from_dict(data: dict) -> MeasureCurve:
    try:
        return MeasureCurve(data["times"], tuple(measure_from_dict(s) for s in data["states"]))
    except KeyError as e:
        raise ConfigParse(f"curve document is missing {e}") from e


def lifting_to_dict(lam: Lifting) -> dict:
    return {"type": "lifting", "weights": lam.weights.weights.tolist(), "tail_mass": lam.weights.tail_mass,
            "times": lam.times.tolist(), "positions": lam.positions.tolist()}


def lifting_from_dict(data: dict) -> Lifting:
    try:
        weights = WeightSequence(data["weights"], float(data.get("tail_mass", 0.0)))
        return Lifting(weights, data["times"], np.asarray(data["positions"], dtype=float))
    except KeyError as e:
        raise ConfigParse(f"lifting document is missing {e}") from e


_DUMPERS = (
    (AtomicMeasure, measure_to_dict),
    (MeasureCurve, curve_to_dict),
    (Lifting, lifting_to_dict),
    (RandomMeasureLaw, lambda law: {"type": "law", **law.to_dict()}),
    ((CylinderFn, GenCylinderFn, InteractionFn), lambda F: F.to_dict()),
)


def dump(obj) -> dict:
    """Versioned JSON document for a domain object or a report."""
    for cls, fn in _DUMPERS:
        if isinstance(obj, cls):
            doc = fn(obj)
            break
    else:
        doc = to_jsonable(obj)
        if not isinstance(doc, dict):
            doc = {"value": doc}
    return {"format_version": FORMAT_VERSION, **to_jsonable(doc)}


def check_version(data: dict):
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"document has format_version {version!r}, expected {FORMAT_VERSION!r}")


def load(data: dict):
    """Domain object from a versioned document, dispatched on ``type``."""
    check_version(data)
    kind = data.get("type")
    if kind == "measure":
        return measure_from_dict(data)
    if kind == "curve":
        return curve_from_dict(data)
    if kind == "lifting":
        return lifting_from_dict(data)
    if kind == "law":
        return RandomMeasureLaw.from_dict({k: v for k, v in data.items() if k not in ("type", "format_version")})
    if kind in ("cylinder", "gen_cylinder", "interaction"):
        return build_functional(data)
    raise ConfigParse(f"unknown document type {kind!r}")


# ---- files ----

def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = obj if isinstance(obj, dict) and "format_version" in obj else dump(obj)
    path.write_text(dumps(doc))
    logger.debug("Wrote %s", path)
    return path


def read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigParse(f"{path} is not valid JSON: {e}") from e
    except OSError as e:
        raise ConfigParse(f"cannot read {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigParse(f"{path} does not hold a JSON object")
    return data


def read_object(path):
    return load(read_json(path))


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """Rows of scalars under a header; the first line names the format version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as f:
        f.write(f"# format_version={FORMAT_VERSION}\n")
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: to_jsonable(row.get(k)) for k in columns})
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path

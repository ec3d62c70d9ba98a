"""Plain-text file formats: events, geometry, noise, config, chains and manifests.

Every float is written with 17 significant digits, so reading a file back
and writing it again reproduces it byte for byte.

Schemas
-------
events.csv      ``time_min,recorder_id`` or ``timestamp,recorder_id`` (ISO-8601)
geometry.csv    ``recorder_id,x_km,y_km`` or a distance matrix whose header is
                ``recorder_id,<id_1>,...,<id_K>``
noise.csv       ``time_min,recorder_id,value`` (or ``timestamp`` in place of ``time_min``)
branching.csv   ``event,parent`` with 1-based event numbers and 0 for contact calls
chain.csv       ``iteration,loglik`` followed by the parameter columns
config          ``key = value`` lines, ``#`` starts a comment
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    CovariateSeries,
    MarkedEventSequence,
    ModelParams,
    ModelVariant,
    RecorderArray,
    ValidationError,
    validate_sequence,
)
from .inference import PosteriorChain, chain_columns, chain_from_matrix, chain_to_matrix

FLOAT_FMT = "%.17g"


class ParseError(ValidationError):
    """A schema violation, located by file and line."""

    def __init__(self, path, line: int, msg: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


def fmt(x) -> str:
    return FLOAT_FMT % float(x)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _rows(path):
    """Yield (line number, fields) for non-blank lines after the header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "file is empty") from None
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((reader.line_num, [c.strip() for c in row]))
    return header, rows


def _float(path, line, text, what):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, f"{what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise ParseError(path, line, f"{what} must be finite")
    return v


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[str]]):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


# ---------------------------------------------------------------------------
# time origin
# ---------------------------------------------------------------------------
def parse_timestamp(text: str) -> dt.datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    return dt.datetime.fromisoformat(s)


def midnight_before(t: dt.datetime) -> dt.datetime:
    """Latest midnight strictly before ``t``."""
    m = t.replace(hour=0, minute=0, second=0, microsecond=0)
    return m - dt.timedelta(days=1) if m == t else m


def minutes_since(t: dt.datetime, origin: dt.datetime) -> float:
    return (t - origin).total_seconds() / 60.0


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EventTable:
    """Raw event rows before validation against an array and horizon."""

    times: np.ndarray
    labels: tuple
    origin: Optional[dt.datetime] = None

    @property
    def t0_clock_min(self) -> Optional[float]:
        # ISO input is re-based on a midnight, so clock time and model time agree
        return 0.0 if self.origin is not None else None


def read_events(path) -> EventTable:
    header, rows = _rows(path)
    if header[:2] == ["time_min", "recorder_id"]:
        iso = False
    elif header[:2] == ["timestamp", "recorder_id"]:
        iso = True
    else:
        raise ParseError(path, 1, "expected header 'time_min,recorder_id' or 'timestamp,recorder_id'")
    raw, labels = [], []
    for line, r in rows:
        if len(r) != 2:
            raise ParseError(path, line, f"expected 2 fields, found {len(r)}")
        if not r[1]:
            raise ParseError(path, line, "empty recorder_id")
        if iso:
            try:
                raw.append(parse_timestamp(r[0]))
            except ValueError:
                raise ParseError(path, line, f"bad ISO-8601 timestamp {r[0]!r}") from None
        else:
            raw.append(_float(path, line, r[0], "time_min"))
        labels.append(r[1])
    origin = None
    if iso:
        if not raw:
            raise ParseError(path, 1, "no events")
        origin = midnight_before(min(raw))
        times = np.array([minutes_since(t, origin) for t in raw])
    else:
        times = np.array(raw, dtype=float)
    return EventTable(times=times, labels=tuple(labels), origin=origin)


def events_to_sequence(table: EventTable, array: RecorderArray, horizon: Optional[float] = None,
                       path="events") -> MarkedEventSequence:
    """Map recorder labels onto the array and validate; the horizon defaults to the last event time."""
    index = {rid: k for k, rid in enumerate(array.ids)}
    marks = np.empty(len(table.labels), dtype=np.int64)
    for i, lab in enumerate(table.labels):
        if lab not in index:
            raise ValidationError(f"{path}: recorder {lab!r} is not in the geometry")
        marks[i] = index[lab]
    if horizon is None:
        if not table.times.size:
            raise ValidationError(f"{path}: horizon needed for an empty event file")
        horizon = float(table.times.max())
    return validate_sequence(table.times, marks, horizon, array.K)


def write_events(path, seq: MarkedEventSequence, ids: Sequence[str]):
    write_csv(path, ["time_min", "recorder_id"],
               ((fmt(t), ids[m]) for t, m in zip(seq.times, seq.marks)))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------
def read_geometry(path) -> RecorderArray:
    header, rows = _rows(path)
    if not header or header[0] != "recorder_id":
        raise ParseError(path, 1, "first column must be 'recorder_id'")
    ids = [r[0] for _, r in rows]
    if header == ["recorder_id", "x_km", "y_km"]:
        xy = []
        for line, r in rows:
            if len(r) != 3:
                raise ParseError(path, line, f"expected 3 fields, found {len(r)}")
            xy.append([_float(path, line, r[1], "x_km"), _float(path, line, r[2], "y_km")])
        try:
            return RecorderArray.from_coords(np.array(xy).reshape(-1, 2), ids=ids)
        except ValidationError as e:
            raise ValidationError(f"{path}: {e}") from None
    cols = header[1:]
    if cols != ids:
        raise ParseError(path, 1, "distance-matrix header must list the row ids in the same order")
    K = len(cols)
    d = np.empty((K, K))
    for i, (line, r) in enumerate(rows):
        if len(r) != K + 1:
            raise ParseError(path, line, f"expected {K + 1} fields, found {len(r)}")
        d[i] = [_float(path, line, x, "distance") for x in r[1:]]
    try:
        return RecorderArray.from_distances(d, ids=ids)
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None


def write_geometry(path, array: RecorderArray):
    if array.coords is not None:
        write_csv(path, ["recorder_id", "x_km", "y_km"],
                   ((rid, fmt(x), fmt(y)) for rid, (x, y) in zip(array.ids, array.coords)))
    else:
        write_csv(path, ["recorder_id", *array.ids],
                   ((rid, *(fmt(v) for v in row)) for rid, row in zip(array.ids, array.dist)))


# ---------------------------------------------------------------------------
# noise covariate
# ---------------------------------------------------------------------------
def read_noise(path, array: RecorderArray, t0_clock_min: float = 0.0,
               origin: Optional[dt.datetime] = None, standardize: bool = True) -> CovariateSeries:
    """Per-recorder noise series; ISO timestamps need the ``origin`` of the event file."""
    header, rows = _rows(path)
    if header[:3] == ["time_min", "recorder_id", "value"]:
        iso = False
    elif header[:3] == ["timestamp", "recorder_id", "value"]:
        iso = True
        if origin is None:
            raise ParseError(path, 1, "timestamped noise needs timestamped events to fix the time origin")
    else:
        raise ParseError(path, 1, "expected header 'time_min,recorder_id,value'")
    index = {rid: k for k, rid in enumerate(array.ids)}
    series = [([], []) for _ in array.ids]
    for line, r in rows:
        if len(r) != 3:
            raise ParseError(path, line, f"expected 3 fields, found {len(r)}")
        if r[1] not in index:
            raise ParseError(path, line, f"recorder {r[1]!r} is not in the geometry")
        if iso:
            try:
                t = minutes_since(parse_timestamp(r[0]), origin)
            except ValueError:
                raise ParseError(path, line, f"bad ISO-8601 timestamp {r[0]!r}") from None
        else:
            t = _float(path, line, r[0], "time_min")
        ts, vs = series[index[r[1]]]
        if ts and t <= ts[-1]:
            raise ParseError(path, line, "noise times must increase within each recorder")
        ts.append(t)
        vs.append(_float(path, line, r[2], "value"))
    return CovariateSeries.from_arrays([np.array(t) for t, _ in series], [np.array(v) for _, v in series],
                                       standardize=standardize, t0_clock_min=t0_clock_min)


def write_noise(path, cov: CovariateSeries, ids: Sequence[str]):
    rows = []
    for rid, ts, vs in zip(ids, cov.times, cov.values):
        rows.extend((fmt(t), rid, fmt(v)) for t, v in zip(ts, vs))
    write_csv(path, ["time_min", "recorder_id", "value"], rows)


# ---------------------------------------------------------------------------
# branching labels
# ---------------------------------------------------------------------------
def write_branching(path, z: np.ndarray):
    write_csv(path, ["event", "parent"], ((str(i + 1), str(int(p))) for i, p in enumerate(z)))


def read_branching(path) -> np.ndarray:
    header, rows = _rows(path)
    if header != ["event", "parent"]:
        raise ParseError(path, 1, "expected header 'event,parent'")
    z = []
    for i, (line, r) in enumerate(rows):
        if len(r) != 2 or r[0] != str(i + 1):
            raise ParseError(path, line, "rows must be 'event,parent' numbered from 1")
        try:
            z.append(int(r[1]))
        except ValueError:
            raise ParseError(path, line, f"parent {r[1]!r} is not an integer") from None
    return np.array(z, dtype=np.int64)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------
CONFIG_KEYS = {
    "variant": "nhpp | nhpp-gp | nhpp-cc | nhpp-gp-cc",
    "horizon_min": "observation window T in minutes",
    "t0_clock_min": "clock minute (after midnight) at model time 0",
    "seed": "integer RNG seed",
    "iterations": "total MCMC iterations",
    "burn_in": "discarded initial iterations",
    "thin": "keep every thin-th draw after burn-in",
    "grid_min": "time-grid spacing in minutes",
    "target_count": "expected total events used to calibrate intercepts when simulating",
    "alpha": "comma-separated excitation per recorder (per minute)",
    "eta": "temporal decay (per minute)",
    "phi": "spatial decay (per km)",
    "delta": "GP loading for every recorder",
    "allow_supercritical": "true to simulate explosive parameters anyway",
    "events": "path of an events file",
    "geometry": "path of a geometry file",
    "noise": "path of a noise file",
}


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ParseError(path, line_no, "expected 'key = value'")
            key, value = (s.strip() for s in text.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ParseError(path, line_no, f"unknown key {key!r}")
            if key in out:
                raise ParseError(path, line_no, f"duplicate key {key!r}")
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# parameters and JSON
# ---------------------------------------------------------------------------
def params_to_dict(p: ModelParams) -> dict:
    out = {}
    for name in ("beta", "beta_tilde", "tau", "delta", "delta_tilde", "tau_delta", "w_grid", "alpha", "eta", "phi"):
        v = getattr(p, name)
        if v is None:
            continue
        out[name] = np.asarray(v, dtype=float).tolist() if np.ndim(v) else float(v)
    return out


def params_from_dict(d: dict) -> ModelParams:
    kw = {}
    for name, v in d.items():
        kw[name] = np.array(v, dtype=float) if isinstance(v, list) else float(v)
    return ModelParams(**kw)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, ModelVariant):
        return x.value
    return x


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------
def write_chain(path, chain: PosteriorChain):
    header = ["iteration", "loglik"] + chain_columns(chain.variant, chain.K, chain.grid_size)
    mat = chain_to_matrix(chain)
    write_csv(path, header, ((str(int(r[0])), *(fmt(v) for v in r[1:])) for r in mat))


def read_chain(path, variant, K: int, grid_size: int, **meta) -> PosteriorChain:
    variant = ModelVariant(variant)
    header, rows = _rows(path)
    expected = ["iteration", "loglik"] + chain_columns(variant, K, grid_size)
    if header != expected:
        raise ParseError(path, 1, f"chain columns do not match variant {variant.value} with K={K}")
    mat = np.empty((len(rows), len(expected)))
    for i, (line, r) in enumerate(rows):
        if len(r) != len(expected):
            raise ParseError(path, line, f"expected {len(expected)} fields, found {len(r)}")
        mat[i] = [_float(path, line, x, header[c]) for c, x in enumerate(r)]
    return chain_from_matrix(mat, variant, K, grid_size, **meta)


def input_hashes(paths: dict) -> dict:
    """sha256 of every named input file that exists (``None`` entries are skipped)."""
    return {k: sha256_file(p) for k, p in sorted(paths.items()) if p is not None and os.path.exists(p)}

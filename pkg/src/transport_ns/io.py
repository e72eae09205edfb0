"""Artifact files: binary field container, CSV series and JSON summaries."""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .torus_field import TorusGrid, field_of_rank

MAGIC = b"TNSF"
VERSION = 1
_HEADER = struct.Struct("<4sHBBI")  # magic, version, dim, rank, resolution


class ArtifactIOError(OSError):
    """Reading or writing an artifact failed; the message names the path."""


def write_field(path, field) -> None:
    """Self-describing little-endian float64 container, row-major values."""
    g = field.grid
    rank = field.values.ndim - g.dim
    data = np.ascontiguousarray(field.values, dtype="<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, g.dim, rank, g.resolution))
            fh.write(data.tobytes(order="C"))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write field {path}: {exc.strerror or exc}") from exc


def read_field(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read field {path}: {exc.strerror or exc}") from exc
    if len(raw) < _HEADER.size:
        raise ArtifactIOError(f"{path}: truncated header")
    magic, version, dim, rank, M = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ArtifactIOError(f"{path}: not a field container (magic {magic!r}, version {version})")
    grid = TorusGrid(dim, M)
    shape = (dim,) * rank + grid.shape
    count = int(np.prod(shape))
    if len(raw) != _HEADER.size + 8 * count:
        raise ArtifactIOError(f"{path}: expected {count} values")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(shape)
    return field_of_rank(grid, values.astype(float))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    try:
        Path(path).write_text(dumps(obj))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create directory {p}: {exc.strerror or exc}") from exc
    return p

"""Snapshot-pair datasets, network parameter documents and CSV exports.

Dataset files are little-endian binary::

    b"SPINNDS1"  u32 nx  u32 ny  f64 lx  f64 ly  u32 n_pairs  u32 meta_len
    meta_len bytes of UTF-8 JSON
    n_pairs x (f64 delta, nx*ny f64 phi1, nx*ny f64 phi2)   # row-major fields
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    DatasetFormatError,
    DimensionOverflowError,
    ModelSchemaError,
    ShapeMismatchError,
    TruncatedFileError,
)
from .grid import GridSpec, make_grid
from .mlp import MlpParams

MAGIC = b"SPINNDS1"
_HEADER = struct.Struct("<8sIIddII")
MAX_NODES = 1 << 26


@dataclass
class SnapshotPair:
    phi1: np.ndarray
    phi2: np.ndarray
    delta: float


@dataclass
class Dataset:
    grid: GridSpec
    pairs: list[SnapshotPair]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, p in enumerate(self.pairs):
            self.grid.check_field(p.phi1, f"pairs[{i}].phi1")
            self.grid.check_field(p.phi2, f"pairs[{i}].phi2")
            if not (np.isfinite(p.delta) and p.delta > 0):
                raise ValueError(f"pairs[{i}].delta must be positive, got {p.delta}")

    def __len__(self):
        return len(self.pairs)

    def phi_range(self) -> tuple[float, float]:
        lo = min(min(p.phi1.min(), p.phi2.min()) for p in self.pairs)
        hi = max(max(p.phi1.max(), p.phi2.max()) for p in self.pairs)
        return float(lo), float(hi)

    def subset(self, indices) -> Dataset:
        return Dataset(self.grid, [self.pairs[i] for i in indices], dict(self.meta))


def write_dataset(path, ds: Dataset) -> None:
    meta = json.dumps(ds.meta, sort_keys=True).encode("utf-8")
    g = ds.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.nx, g.ny, g.lx, g.ly, len(ds.pairs), len(meta)))
        fh.write(meta)
        for p in ds.pairs:
            fh.write(struct.pack("<d", p.delta))
            fh.write(np.ascontiguousarray(p.phi1, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.phi2, dtype="<f8").tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise BadMagicError(f"{path}: not a dataset file")
        raise TruncatedFileError(f"{path}: file shorter than the header ({len(data)} bytes)")
    magic, nx, ny, lx, ly, n_pairs, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if nx * ny > MAX_NODES or nx * ny == 0:
        raise DimensionOverflowError(f"{path}: declared grid {nx}x{ny} is out of range")
    record = 8 + 16 * nx * ny
    expected = _HEADER.size + meta_len + n_pairs * record
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise DatasetFormatError(f"{path}: {len(data) - expected} trailing bytes")
    try:
        grid = make_grid(nx, ny, lx, ly)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    pos = _HEADER.size
    try:
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: unreadable metadata ({exc})") from exc
    pos += meta_len
    n = nx * ny
    pairs = []
    for _ in range(n_pairs):
        (delta,) = struct.unpack_from("<d", data, pos)
        pos += 8
        phi1 = np.frombuffer(data, "<f8", n, pos).reshape(nx, ny).astype(np.float64)
        pos += 8 * n
        phi2 = np.frombuffer(data, "<f8", n, pos).reshape(nx, ny).astype(np.float64)
        pos += 8 * n
        pairs.append(SnapshotPair(phi1, phi2, delta))
    return Dataset(grid, pairs, meta)


def model_document(params: MlpParams, meta: dict | None = None) -> dict:
    return {
        "layer_sizes": list(params.layer_sizes),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "meta": meta or {},
    }


def params_from_document(doc: dict) -> MlpParams:
    for key in ("layer_sizes", "weights", "biases"):
        if key not in doc:
            raise ModelSchemaError(f"model document is missing {key!r}")
    try:
        return MlpParams(
            tuple(doc["layer_sizes"]),
            [np.array(w, dtype=np.float64) for w in doc["weights"]],
            [np.array(b, dtype=np.float64) for b in doc["biases"]],
        )
    except (ShapeMismatchError, ValueError, TypeError) as exc:
        raise ModelSchemaError(f"inconsistent model document: {exc}") from exc


def write_model(path, params: MlpParams, meta: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_document(params, meta), fh, indent=1)
        fh.write("\n")


def read_model_document(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelSchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelSchemaError(f"{path}: top level must be an object")
    return doc


def read_model(path) -> MlpParams:
    return params_from_document(read_model_document(path))


def export_curve(path, phi, f_learned, f_true=None) -> None:
    """CSV with header ``phi,f_learned[,f_true]``."""
    phi = np.asarray(phi, dtype=np.float64)
    f_learned = np.asarray(f_learned, dtype=np.float64)
    header = ["phi", "f_learned"]
    cols = [phi, f_learned]
    if f_true is not None:
        header.append("f_true")
        cols.append(np.asarray(f_true, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def write_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")

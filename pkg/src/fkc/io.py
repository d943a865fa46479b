"""Sample dumps, diagnostics and atomic file writes.

Binary layout (``.fkc1``, little endian)::

    bytes 0-3    magic b"FKC1"
    bytes 4-11   K  (uint64)
    bytes 12-19  d  (uint64)
    bytes 20-27  t  (float64)
    then K*d float64 positions (row major) and K float64 log-weights
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FKCError

MAGIC = b"FKC1"
_HEADER = struct.Struct("<4sQQd")


class DumpFormatError(FKCError, ValueError):
    """A sample dump is missing, truncated or has the wrong magic."""


def atomic_write(path, data: str | bytes):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(path, obj):
    atomic_write(path, json.dumps(_to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _csv_text(header, rows):
    import io as _io
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write(path, _csv_text(header, rows))


def write_samples_csv(path, positions, log_weights):
    """One row per particle: ``index, x0 .. x{d-1}, log_weight``."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    lw = np.asarray(log_weights, dtype=float)
    header = ["index"] + [f"x{j}" for j in range(x.shape[1])] + ["log_weight"]
    rows = ([k] + [repr(float(v)) for v in x[k]] + [repr(float(lw[k]))] for k in range(len(x)))
    write_csv(path, header, rows)


def read_samples_csv(path):
    path = Path(path)
    if not path.exists():
        raise DumpFormatError(f"missing sample dump {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:-1], data[:, -1]


def write_samples_bin(path, positions, log_weights, t: float):
    x = np.ascontiguousarray(np.atleast_2d(positions), dtype="<f8")
    lw = np.ascontiguousarray(log_weights, dtype="<f8")
    K, d = x.shape
    atomic_write(path, _HEADER.pack(MAGIC, K, d, float(t)) + x.tobytes() + lw.tobytes())


def read_samples_bin(path):
    """Return ``(positions, log_weights, t)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DumpFormatError("truncated header")
    magic, K, d, t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DumpFormatError(f"bad magic {magic!r}")
    need = _HEADER.size + 8 * (K * d + K)
    if len(raw) != need:
        raise DumpFormatError(f"expected {need} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return body[:K * d].reshape(K, d).copy(), body[K * d:].copy(), t


def write_diagnostics(path, diagnostics: dict):
    write_json(path, diagnostics)

"""Matrix and table I/O.

Matrices are headerless, comma-separated, row-major CSV with every float
written by ``repr`` (shortest string that round-trips), so a matrix written
here reads back bit-identically.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from .exceptions import InvalidSpec


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_matrix(path, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow(repr(float(v)) for v in row)


def read_matrix(path) -> np.ndarray:
    if not os.path.exists(path):
        raise InvalidSpec(f"file not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InvalidSpec(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        raise InvalidSpec(f"{path} is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InvalidSpec(f"{path}: rows have differing lengths {sorted(widths)}")
    return np.array(rows, dtype=float)


def read_vector(path) -> np.ndarray:
    M = read_matrix(path)
    if M.shape[1] == 1:
        return M[:, 0]
    if M.shape[0] == 1:
        return M[0]
    raise InvalidSpec(f"{path} is a {M.shape[0]}x{M.shape[1]} matrix, expected a vector")


def write_table(path, rows, columns) -> None:
    """CSV with a header row; floats written with ``repr``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(_fmt(r[c]) for c in columns)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()

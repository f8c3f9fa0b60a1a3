"""Matrix files, plan dumps and small JSON helpers.

Two matrix formats are understood:

* CSV, one matrix row per line, floats written as their shortest
  round-trip ``repr`` so a write/read cycle is bit-exact;
* raw binary: two little-endian uint64 dims (rows, cols) followed by the
  row-major little-endian float64 payload.

The format is picked from the file suffix (``.csv`` / ``.txt`` vs anything
else, conventionally ``.bin``).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<QQ")
_CSV_SUFFIXES = {".csv", ".txt"}


def _is_csv(path) -> bool:
    return Path(path).suffix.lower() in _CSV_SUFFIXES


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt(x: float) -> str:
    return repr(float(x))


def matrix_to_csv(m) -> str:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return "".join(",".join(_fmt(x) for x in row) + "\n" for row in m)


def matrix_to_bytes(m) -> bytes:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    payload = np.ascontiguousarray(m, dtype="<f8").tobytes()
    return _HEADER.pack(*m.shape) + payload


def write_matrix(path, m) -> None:
    if _is_csv(path):
        atomic_write_text(path, matrix_to_csv(m))
    else:
        atomic_write_bytes(path, matrix_to_bytes(m))


def read_matrix(path) -> np.ndarray:
    """Read a matrix in either supported format; raises ``ValueError`` on bad input."""
    path = Path(path)
    if _is_csv(path):
        rows = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not rows:
            raise ValueError(f"{path}: empty matrix file")
        if len({len(r) for r in rows}) != 1:
            raise ValueError(f"{path}: ragged rows")
        return np.array(rows, dtype=np.float64)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    n_rows, n_cols = _HEADER.unpack_from(data)
    expected = _HEADER.size + 8 * n_rows * n_cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {n_rows}x{n_cols}, got {len(data)}")
    out = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n_rows, n_cols)
    return out.astype(np.float64)


def plan_to_csv(plan, threshold: float = 1e-12) -> str:
    """Sparse dump of a plan: ``region,label,weight`` for entries above ``threshold``."""
    p = getattr(plan, "entries", plan)
    p = np.asarray(p, dtype=np.float64)
    lines = ["region,label,weight"]
    for k, i in zip(*np.nonzero(p > threshold)):
        lines.append(f"{k},{i},{_fmt(p[k, i])}")
    return "\n".join(lines) + "\n"


def read_plan_csv(path, shape) -> np.ndarray:
    p = np.zeros(shape)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "region,label,weight":
        raise ValueError(f"{path}: missing plan header")
    for line in lines[1:]:
        if line.strip():
            k, i, w = line.split(",")
            p[int(k), int(i)] = float(w)
    return p


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"

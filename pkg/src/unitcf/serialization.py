"""CSV and JSON I/O with atomic writes.

Floats are written with ``repr`` so that reading a file back reproduces the
exact values and identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .model import Bounds, Dims, ExtendedParams, JointParams


def write_atomic(path, data):
    """Write ``data`` (str or bytes) to a temporary file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return repr(float(v))


def matrix_to_csv(M, prefix="x"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [",".join(f"{prefix}{k + 1}" for k in range(M.shape[1]))]
    lines += [",".join(_fmt(v) for v in row) for row in M]
    return "\n".join(lines) + "\n"


def write_matrix_csv(path, M, prefix="x"):
    write_atomic(path, matrix_to_csv(M, prefix))


def read_matrix_csv(path):
    """Returns ``(matrix, header)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgument(f"{path} is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        M = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InvalidArgument(f"{path}: non-numeric entry ({exc})") from None
    if M.size == 0:
        M = M.reshape(0, len(header))
    if M.shape[1] != len(header):
        raise InvalidArgument(f"{path}: rows have {M.shape[1]} fields, header has {len(header)}")
    return M, header


def write_mask_csv(path, mask):
    mask = np.asarray(mask, dtype=bool).ravel()
    write_atomic(path, "clean\n" + "".join(f"{int(b)}\n" for b in mask))


def read_mask_csv(path):
    M, _ = read_matrix_csv(path)
    return M[:, 0].astype(bool)


def to_json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    write_atomic(path, to_json_text(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: invalid JSON ({exc})") from None


def _matrix(a):
    return np.asarray(a, dtype=float).tolist()


def bounds_to_dict(b: Bounds):
    return {"alpha": b.alpha, "beta": b.beta, "x_max": b.x_max}


def bounds_from_dict(d):
    try:
        return Bounds(d["alpha"], d["beta"], d["x_max"])
    except KeyError as exc:
        raise InvalidArgument(f"bounds missing {exc}") from None


def dims_to_dict(d: Dims):
    return {"p_v": d.p_v, "p_a": d.p_a, "p_y": d.p_y, "n": d.n}


def dims_from_dict(d):
    try:
        return Dims(d["p_v"], d["p_a"], d["p_y"], d.get("n", 1))
    except KeyError as exc:
        raise InvalidArgument(f"dims missing {exc}") from None


def joint_to_dict(j: JointParams):
    return {"phi": _matrix(j.phi), "Phi": _matrix(j.Phi)}


def joint_from_dict(d):
    return JointParams(np.array(d["phi"], dtype=float), np.array(d["Phi"], dtype=float))


def params_to_dict(p: ExtendedParams):
    return {"theta": _matrix(p.theta), "fields": _matrix(p.fields)}


def params_from_dict(d):
    try:
        theta = np.array(d["theta"], dtype=float)
        fields = np.array(d["fields"], dtype=float).reshape(-1, theta.shape[0])
    except (KeyError, ValueError) as exc:
        raise InvalidArgument(f"malformed parameter file ({exc})") from None
    return ExtendedParams.from_arrays(theta, fields)


def records_to_csv(records, columns):
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in records:
        buf.write(",".join(_fmt(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns) + "\n")
    return buf.getvalue()

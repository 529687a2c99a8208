"""Reduction helpers shared by the pricing, allocation and audit code.

Every reduction that feeds a reported figure goes through :func:`math.fsum`,
so results are correctly rounded and independent of summation order or
parallel scheduling.
"""
from __future__ import annotations

import hashlib
import json
import math

import numpy as np


def column_fsum(rows: np.ndarray) -> np.ndarray:
    """Correctly rounded column sums of a 2-D array."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise ValueError("column_fsum expects a 2-D array")
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1])
    return np.array([math.fsum(col) for col in rows.T.tolist()])


def fdot(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product with a correctly rounded final reduction."""
    prod = np.asarray(a, dtype=float).ravel() * np.asarray(b, dtype=float).ravel()
    return math.fsum(prod.tolist())


def ulp_close(a: float, b: float, ulps: int = 8, scale: float = 0.0) -> bool:
    """True when ``|a - b|`` is within ``ulps`` units in the last place.

    The unit is taken at ``max(|a|, |b|, scale)``. Pass the magnitude of the
    summands as ``scale`` when the compared totals come from sums with
    cancellation.
    """
    ref = max(abs(a), abs(b), abs(scale))
    return abs(a - b) <= ulps * np.spacing(ref) if ref > 0 else a == b


def ulp_distance(a: float, b: float, scale: float = 0.0) -> float:
    ref = max(abs(a), abs(b), abs(scale))
    if ref == 0:
        return 0.0
    return abs(a - b) / np.spacing(ref)


def array_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=float)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def json_digest(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr

"""Global conditioning sets and conditional averaging.

Conventions
-----------
* Sign sets: ``V >= 0`` is positive, ``V < 0`` negative, so the two always
  partition the paths.
* ES/VaR: ``loss = -value``; the worst scenarios have the largest loss and
  ties are broken by ascending scenario index.
* ES set size is ``floor((1 - alpha) n)`` scenarios (at least one), i.e. the
  largest count whose probability mass does not exceed ``1 - alpha``. With
  2500 scenarios at 97.5% that is 62.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .numerics import array_digest

_MASS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConditioningSet:
    """Selected path (or shock scenario) indices per stopping date.

    Indices are 0-based and sorted in memory; the JSON export is 1-based.
    ``n_total`` is the full path count used by the ``1/n`` normalisation.
    """

    selector: str
    indices: tuple[np.ndarray, ...]
    n_total: int
    source_digest: str | None = None
    weights: np.ndarray | None = None

    @property
    def n_dates(self) -> int:
        return len(self.indices)

    def size(self, date: int = 0) -> int:
        return int(self.indices[date].size)

    def mask(self, date: int = 0) -> np.ndarray:
        m = np.zeros(self.n_total, dtype=bool)
        m[self.indices[date]] = True
        return m

    def to_json(self, dates: Sequence[float] | None = None) -> list[dict]:
        out = []
        for k, idx in enumerate(self.indices):
            out.append({
                "date": float(dates[k]) if dates is not None else k,
                "selector": self.selector,
                "indices": [int(i) + 1 for i in idx],
            })
        return out

    def dumps(self, dates=None) -> str:
        return json.dumps(self.to_json(dates), sort_keys=True)

    def same_as(self, other: "ConditioningSet") -> bool:
        return (self.n_total == other.n_total and self.n_dates == other.n_dates
                and all(np.array_equal(a, b) for a, b in zip(self.indices, other.indices)))


def _as_matrix(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2:
        raise ValueError("values must be (n_paths,) or (n_paths, n_dates)")
    return v


def sign_condition(values, sign: str = "+") -> ConditioningSet:
    """Paths with ``V >= 0`` (``sign='+'``) or ``V < 0`` (``'-'``) per date.

    ``sign=''`` selects every path (no restriction).
    """
    v = _as_matrix(values)
    if not np.all(np.isfinite(v)):
        raise ValueError("portfolio values must be finite")
    if sign == "+":
        sel = [np.flatnonzero(v[:, k] >= 0) for k in range(v.shape[1])]
    elif sign == "-":
        sel = [np.flatnonzero(v[:, k] < 0) for k in range(v.shape[1])]
    elif sign == "":
        sel = [np.arange(v.shape[0]) for _ in range(v.shape[1])]
    else:
        raise ConfigurationError(f"unknown sign selector {sign!r}")
    return ConditioningSet(f"sign{sign or '*'}", tuple(sel), v.shape[0], array_digest(v))


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")


def tail_order(losses) -> np.ndarray:
    """Scenario indices from worst (largest loss) to best, ties by index."""
    losses = np.asarray(losses, dtype=float)
    return np.lexsort((np.arange(losses.size), -losses))


def es_count(alpha: float, weights: np.ndarray, order: np.ndarray) -> int:
    """Number of worst scenarios whose total mass stays within ``1 - alpha``."""
    mass = np.cumsum(weights[order])
    return max(1, int(np.sum(mass <= (1.0 - alpha) + _MASS_TOL)))


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ConfigurationError("scenario weights must be nonnegative and sum to 1")
    return w


def es_condition(losses, alpha: float, weights=None) -> ConditioningSet:
    """The ES(alpha) tail: the worst ``floor((1-alpha) n)`` scenarios (>= 1)."""
    _check_alpha(alpha)
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size == 0:
        raise ConfigurationError("need at least one scenario")
    w = _weights(losses.size, weights)
    order = tail_order(losses)
    m = es_count(alpha, w, order)
    return ConditioningSet(f"ES({alpha})", (np.sort(order[:m]),), losses.size,
                           array_digest(losses), None if weights is None else w)


def var_condition(losses, alpha: float, beta: float | None = None, weights=None) -> ConditioningSet:
    """VaR as the limit of ES bands.

    With ``beta=None`` this is the single scenario at the boundary of the
    ES(alpha) tail (its least-bad member). With ``beta < alpha`` it is the
    band of ranks between the ES(alpha) boundary and the ES(beta) boundary.
    """
    _check_alpha(alpha)
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size == 0:
        raise ConfigurationError("need at least one scenario")
    w = _weights(losses.size, weights)
    order = tail_order(losses)
    m_alpha = es_count(alpha, w, order)
    if beta is None:
        sel = order[m_alpha - 1:m_alpha]
        label = f"VaR({alpha})"
    else:
        _check_alpha(beta)
        if beta > alpha:
            raise ConfigurationError("band needs beta <= alpha")
        m_beta = es_count(beta, w, order)
        sel = order[m_alpha - 1:m_beta]
        label = f"VaR({beta},{alpha})"
    return ConditioningSet(label, (np.sort(sel),), losses.size, array_digest(losses),
                           None if weights is None else w)


def conditional_mean(values, cond: ConditioningSet, date: int = 0,
                     normalization: str = "total") -> float:
    """Average of ``values`` over the selected paths at ``date``.

    ``normalization='total'`` divides by the full path count (selected paths
    contribute, the rest count as zero); ``'set'`` divides by the selected
    weight, as for an ES average.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = v[:, date]
    if v.shape[0] != cond.n_total:
        raise ValueError(f"values cover {v.shape[0]} paths, set expects {cond.n_total}")
    idx = cond.indices[date]
    if normalization == "total":
        if idx.size == 0:
            return 0.0
        return math.fsum(v[idx].tolist()) / cond.n_total
    if normalization == "set":
        if idx.size == 0:
            raise ValueError("set-size normalisation of an empty set")
        if cond.weights is not None:
            w = cond.weights[idx]
            return math.fsum((w * v[idx]).tolist()) / math.fsum(w.tolist())
        return math.fsum(v[idx].tolist()) / idx.size
    raise ValueError(f"unknown normalization {normalization!r}")

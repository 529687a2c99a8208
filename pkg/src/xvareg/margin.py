"""ES/VaR initial margin from regressions and its lifetime funding cost (MVA)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, eval_basis
from .conditioning import ConditioningSet, _check_alpha, es_condition, var_condition
from .credit import CreditCurve, PiecewiseConstant
from .errors import ConfigurationError
from .measures import LinearMeasure, moments_from_rows
from .numerics import column_fsum, fdot
from .scenarios import ScenarioCube, ShockSet

_MASS_TOL = 1e-9
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class MarginResult:
    margin: float
    conditioning: ConditioningSet
    losses: np.ndarray
    measure: LinearMeasure
    measure_kind: str


def shock_loss_rows(spec: BasisSpec, base, shocks: ShockSet) -> np.ndarray:
    """Per-scenario loss functionals ``f(base) - f(shocked)``, ``(S, L)``."""
    base = np.asarray(base, dtype=float)
    return eval_basis(spec, base)[None, :] - eval_basis(spec, shocks.apply(base))


def _select(losses, alpha, measure, shocks: ShockSet):
    weights = None if shocks.uniform else shocks.weights
    m = measure.upper()
    if m == "ES":
        return es_condition(losses, alpha, weights)
    if m == "VAR":
        return var_condition(losses, alpha, weights=weights)
    raise ConfigurationError(f"unknown margin measure {measure!r}")


def compute_initial_margin(coefficients, spec: BasisSpec, shocks: ShockSet, alpha: float,
                           measure: str = "ES", base=None) -> MarginResult:
    """Margin at one date from the regression coefficients ``(L,)``.

    Portfolio P&L under each shock is the regression value at the shocked
    state minus the value at the base state; ``loss = -P&L``. ES averages the
    losses over its tail set (set-size normalisation); VaR takes the
    boundary scenario.
    """
    _check_alpha(alpha)
    if shocks.n == 0:
        raise ConfigurationError("empty shock set")
    base = shocks.base if base is None else base
    a = np.asarray(coefficients, dtype=float)
    rows = shock_loss_rows(spec, base, shocks)
    losses = rows @ a
    cond = _select(losses, alpha, measure, shocks)
    idx = cond.indices[0]
    w = shocks.weights[idx]
    m, am = moments_from_rows(rows[idx] * (w / math.fsum(w.tolist()))[:, None])
    lm = LinearMeasure(f"IM-{measure}", m[None, :], am[None, :])
    return MarginResult(fdot(a, m), cond, losses, lm, measure.upper())


@dataclass(frozen=True, eq=False)
class LifetimeMargins:
    """Per-date margins averaged over the measure paths.

    ``path_margins[j, k]`` is the scenario-level ES (or VaR) on path ``j``;
    ``tail_sets[:, k]`` is an ``(n_base, S)`` boolean mask of the shocks used
    and ``path_rows`` the per-path margin functionals ``(n_base, n_dates, L)``.
    """

    margins: np.ndarray
    path_margins: np.ndarray
    measure: LinearMeasure
    tail_sets: np.ndarray
    losses: np.ndarray | None
    alpha: float
    measure_kind: str
    path_rows: np.ndarray


def tail_mask(losses: np.ndarray, weights: np.ndarray, alpha: float, kind: str) -> np.ndarray:
    """Row-wise tail selection for a ``(n, S)`` loss matrix."""
    n, s = losses.shape
    order = np.argsort(-losses, axis=1, kind="stable")
    mass = np.cumsum(weights[order], axis=1)
    count = np.maximum(1, np.sum(mass <= (1.0 - alpha) + _MASS_TOL, axis=1))
    mask = np.zeros((n, s), dtype=bool)
    rows = np.arange(n)[:, None]
    ranks = np.arange(s)[None, :]
    if kind == "ES":
        mask[rows, order] = ranks < count[:, None]
    else:
        mask[rows, order] = ranks == (count[:, None] - 1)
    return mask


def shocked_rows(spec: BasisSpec, states: np.ndarray, shocks: ShockSet) -> np.ndarray:
    """Loss functionals of every shock on every state, ``(n, S, L)``."""
    return eval_basis(spec, states)[:, None, :] - eval_basis(spec, shocks.apply(states))


def path_margin_rows(rows: np.ndarray, shocks: ShockSet, mask: np.ndarray) -> np.ndarray:
    """Per-path margin functionals ``(n, L)`` from shocked rows and tail masks."""
    w = mask * shocks.weights[None, :]
    w = w / w.sum(axis=1, keepdims=True)
    return np.einsum("ns,nsl->nl", w, rows)


def lifetime_margins(coefficients, spec: BasisSpec, cube: ScenarioCube, shocks: ShockSet,
                     alpha: float, measure: str = "ES", keep_losses: bool = False) -> LifetimeMargins:
    """Scenario-level margin on every measure path and stopping date ``k >= 1``.

    Shocks are applied to each path's state at each date; the per-date margin
    is the plain average over paths.
    """
    _check_alpha(alpha)
    kind = measure.upper()
    if kind not in ("ES", "VAR"):
        raise ConfigurationError(f"unknown margin measure {measure!r}")
    a = np.asarray(coefficients, dtype=float)
    n, n_dates = cube.n_base, cube.n_dates
    path_rows = np.zeros((n, n_dates, spec.size))
    masks = np.zeros((n, n_dates, shocks.n), dtype=bool)
    all_losses = np.zeros((n, n_dates, shocks.n)) if keep_losses else None
    for k in range(1, n_dates):
        for lo in range(0, n, _CHUNK):
            hi = min(n, lo + _CHUNK)
            rows = shocked_rows(spec, cube.values[lo:hi, k, :], shocks)
            losses = rows @ a[k]
            if keep_losses:
                all_losses[lo:hi, k] = losses
            mask = tail_mask(losses, shocks.weights, alpha, kind)
            path_rows[lo:hi, k] = path_margin_rows(rows, shocks, mask)
            masks[lo:hi, k] = mask
    lm = margin_measure(path_rows, kind)
    path_margins = np.einsum("nkl,kl->nk", path_rows, a)
    return LifetimeMargins(lm.per_date(a), path_margins, lm, masks, all_losses, alpha, kind,
                           path_rows)


def margin_measure(path_rows: np.ndarray, kind: str = "ES") -> LinearMeasure:
    """Path average of per-path margin functionals, date by date."""
    n, n_dates, size = path_rows.shape
    moments = np.zeros((n_dates, size))
    abs_moments = np.zeros((n_dates, size))
    for k in range(1, n_dates):
        moments[k] = column_fsum(path_rows[:, k]) / n
        abs_moments[k] = column_fsum(np.abs(path_rows[:, k])) / n
    return LinearMeasure(f"lifetime-{kind}", moments, abs_moments)


@dataclass(frozen=True, eq=False)
class MvaResult:
    total: float
    integrands: np.ndarray
    weights: np.ndarray


def mva_weights(dates, spread, credit: CreditCurve, survival: bool = True) -> np.ndarray:
    """``(t_k - t_{k-1}) spread(t_k) D(t_0, t_k)``; ``D = D_q`` by default,
    riskless discounting only when ``survival`` is False."""
    dates = np.asarray(dates, dtype=float)
    if not isinstance(spread, PiecewiseConstant):
        spread = PiecewiseConstant.flat(float(spread))
    w = np.zeros(dates.size)
    u = dates[1:]
    disc = credit.discount(dates[0], u) if survival else credit.riskless_discount(dates[0], u)
    w[1:] = np.diff(dates) * spread(u) * disc
    return w


def compute_mva(margins, dates, spread, credit: CreditCurve, survival: bool = True) -> MvaResult:
    """Lifetime funding cost of the per-date margins (rectangle rule)."""
    margins = np.asarray(margins, dtype=float)
    w = mva_weights(dates, spread, credit, survival)
    if margins.shape != w.shape:
        raise ConfigurationError("need one margin per stopping date")
    integrands = w * margins
    return MvaResult(math.fsum(integrands.tolist()), integrands, w)


def mva_measure(lifetime: LifetimeMargins, weights) -> LinearMeasure:
    return lifetime.measure.scaled(weights, name="MVA")


__all__ = [
    "MarginResult", "LifetimeMargins", "MvaResult", "compute_initial_margin",
    "lifetime_margins", "compute_mva", "mva_weights", "mva_measure", "shock_loss_rows",
    "path_margin_rows", "shocked_rows", "margin_measure", "tail_mask",
]

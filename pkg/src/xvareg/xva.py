"""CVA, DVA, FCA and FVA on the shared regression basis.

The adjustment is integrated with the rectangle rule on the stopping dates::

    xVA = -LGD * sum_k (t_k - t_{k-1}) lambda(t_k) D_q(t_0, t_k)
                 * (1/n) * sum_{j in set_k} sum_l a_{l,k} f_l(x_{j,k})

where ``set_k`` holds the measure paths on which the portfolio value
satisfies the kind's selector. Only the first ``cube.n_base`` paths (the
measure paths) enter the average; augmentation paths exist for fitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, basis_derivatives, eval_basis
from .conditioning import ConditioningSet, sign_condition
from .credit import CreditCurve, XvaKind
from .errors import ConfigurationError
from .measures import LinearMeasure, moments_from_rows
from .scenarios import ScenarioCube


@dataclass(frozen=True, eq=False)
class LgdPdRegression:
    """Optional state-dependent LGD and PD regressions on the shared basis.

    ``lgd``/``pd`` are coefficients ``(n_dates, L)``; ``pd`` at date ``k`` is
    the default probability over ``(t_{k-1}, t_k]``. A missing regression
    falls back to the constant LGD of the party and ``lambda(t_k) dt_k``.
    Evaluated values are clamped to ``[0, 1]``.
    """

    spec: BasisSpec
    lgd: np.ndarray | None = None
    pd: np.ndarray | None = None

    def _one(self, coef, date, states, fallback, order):
        n = states.shape[0]
        n_u = states.shape[1]
        if coef is None:
            zeros = (np.zeros((n, n_u)), np.zeros((n, n_u, n_u)))
            return np.full(n, float(fallback)), zeros[0], zeros[1], 0
        c = coef[date]
        raw = eval_basis(self.spec, states) @ c
        clamped = np.clip(raw, 0.0, 1.0)
        inside = (raw >= 0.0) & (raw <= 1.0)
        grad = hess = None
        if order >= 1:
            grad = np.einsum("nlu,l->nu", basis_derivatives(self.spec, states, 1), c)
            grad = grad * inside[:, None]
        if order >= 2:
            hess = np.einsum("nluv,l->nuv", basis_derivatives(self.spec, states, 2), c)
            hess = hess * inside[:, None, None]
        return clamped, grad, hess, int(np.sum(~inside))

    def factors(self, date, states, fallback_lgd, fallback_pd, order=0):
        """``(lgd, pd, clamp_counts)``; with ``order >= 1`` each factor is a
        tuple ``(value, gradient, hessian)``."""
        states = np.asarray(states, dtype=float)
        lv, lg, lh, lc = self._one(self.lgd, date, states, fallback_lgd, order)
        pv, pg, ph, pc = self._one(self.pd, date, states, fallback_pd, order)
        counts = {"lgd": lc, "pd": pc}
        if order == 0:
            return lv, pv, counts
        return (lv, lg, lh), (pv, pg, ph), counts


@dataclass(frozen=True, eq=False)
class XvaResult:
    kind: XvaKind
    total: float
    integrands: np.ndarray
    conditioning: ConditioningSet | tuple
    measure: LinearMeasure
    diagnostics: dict = field(default_factory=dict)
    direct_total: float | None = None


def portfolio_path_values(coefficients, spec: BasisSpec, cube: ScenarioCube) -> np.ndarray:
    """Portfolio value on every measure path and date, ``(n_base, n_dates)``."""
    a = np.asarray(coefficients, dtype=float)
    if a.shape != (cube.n_dates, spec.size):
        raise ConfigurationError(
            f"coefficients {a.shape} do not cover {cube.n_dates} dates x {spec.size} basis")
    out = np.empty((cube.n_base, cube.n_dates))
    for k in range(cube.n_dates):
        out[:, k] = eval_basis(spec, cube.base_states(k)) @ a[k]
    return out


def date_factors(cube: ScenarioCube, credit: CreditCurve, kind: XvaKind, with_pd: bool):
    """Per-date weight applied to the path sums.

    Without a PD regression this is the full rectangle weight over ``n``;
    with one, the PD and LGD move inside the path sum and only ``-D_q/n``
    stays outside.
    """
    n = cube.n_base
    dates = cube.dates
    if not with_pd:
        return credit.xva_weights(dates, kind) / n
    w = np.zeros(dates.size)
    w[1:] = -credit.discount(dates[0], dates[1:]) / n
    return w


def fallback_pd(cube: ScenarioCube, credit: CreditCurve, kind: XvaKind, date: int) -> float:
    dt = cube.dates[date] - cube.dates[date - 1]
    return float(credit.hazard(kind.party, cube.dates[date])) * dt


def path_factors(cube: ScenarioCube, credit: CreditCurve, kind: XvaKind,
                 lgdpd: LgdPdRegression | None, date: int):
    """``LGD * PD`` on every measure path at ``date`` (``None`` without
    regressions) and the clamp counts."""
    if lgdpd is None:
        return None, {"lgd": 0, "pd": 0}
    lgd, pd, counts = lgdpd.factors(date, cube.base_states(date), credit.lgd(kind.party),
                                    fallback_pd(cube, credit, kind, date))
    return lgd * pd, counts


def date_moment(rows: np.ndarray, factor: np.ndarray | None, weight: float):
    """Weighted exact column sums of the selected rows, optionally scaled per row."""
    if rows.shape[0] == 0 or (weight == 0.0 and factor is None):
        z = np.zeros(rows.shape[1])
        return z, z.copy()
    if factor is not None:
        rows = rows * factor[:, None]
    return moments_from_rows(rows, weight)


def xva_measure(spec: BasisSpec, cube: ScenarioCube, credit: CreditCurve, kind: XvaKind,
                cond: ConditioningSet, lgdpd: LgdPdRegression | None = None):
    """Moments of the conditioned adjustment, plus clamp counts over measure paths."""
    moments = np.zeros((cube.n_dates, spec.size))
    abs_moments = np.zeros((cube.n_dates, spec.size))
    clamps = {"lgd": 0, "pd": 0}
    w = date_factors(cube, credit, kind, lgdpd is not None)
    for k in range(1, cube.n_dates):
        idx = cond.indices[k]
        factor, counts = path_factors(cube, credit, kind, lgdpd, k)
        clamps["lgd"] += counts["lgd"]
        clamps["pd"] += counts["pd"]
        rows = eval_basis(spec, cube.values[idx, k, :])
        moments[k], abs_moments[k] = date_moment(rows, None if factor is None else factor[idx],
                                                 w[k])
    return LinearMeasure(kind.name, moments, abs_moments), clamps


def _result(kind, coefficients, measure, cond, clamps):
    integrands = measure.per_date(coefficients)
    return XvaResult(kind, math.fsum(integrands.tolist()), integrands, cond, measure,
                     {"clamp_counts": clamps})


def compute_xva(coefficients, spec: BasisSpec, cube: ScenarioCube, credit: CreditCurve,
                kind: XvaKind, lgdpd: LgdPdRegression | None = None,
                cond: ConditioningSet | None = None) -> XvaResult:
    """Adjustment of kind ``kind`` for portfolio coefficients ``(n_dates, L)``.

    The conditioning set is built from these coefficients unless ``cond`` is
    passed (to price a trade or group on the portfolio's set). For FVA,
    ``cond`` is the positive set; the total is DVA + FCA and the
    unconditioned sum is kept in ``direct_total`` as a cross-check.
    """
    a = np.asarray(coefficients, dtype=float)
    if a.shape != (cube.n_dates, spec.size):
        raise ConfigurationError(
            f"coefficients {a.shape} do not cover {cube.n_dates} dates x {spec.size} basis")
    if kind is XvaKind.FVA:
        if cond is None:
            pos = sign_condition(portfolio_path_values(a, spec, cube), "+")
        else:
            pos = cond
        neg = complement(pos)
        fca = compute_xva(a, spec, cube, credit, XvaKind.FCA, lgdpd, pos)
        dva = compute_xva(a, spec, cube, credit, XvaKind.DVA, lgdpd, neg)
        every = ConditioningSet("sign*", tuple(np.arange(pos.n_total) for _ in pos.indices),
                                pos.n_total, pos.source_digest)
        direct_measure, _ = xva_measure(spec, cube, credit, XvaKind.FVA, every, lgdpd)
        measure = dva.measure + fca.measure
        integrands = dva.integrands + fca.integrands
        clamps = {k: dva.diagnostics["clamp_counts"][k] + fca.diagnostics["clamp_counts"][k]
                  for k in ("lgd", "pd")}
        return XvaResult(kind, math.fsum(integrands.tolist()), integrands, (pos, neg),
                         LinearMeasure("FVA", measure.moments, measure.abs_moments),
                         {"clamp_counts": clamps, "DVA": dva.total, "FCA": fca.total},
                         direct_measure.value(a))
    if cond is None:
        cond = sign_condition(portfolio_path_values(a, spec, cube), kind.selector)
    if cond.n_total != cube.n_base or cond.n_dates != cube.n_dates:
        raise ConfigurationError("conditioning set does not match the cube")
    measure, clamps = xva_measure(spec, cube, credit, kind, cond, lgdpd)
    return _result(kind, a, measure, cond, clamps)


def complement(cond: ConditioningSet) -> ConditioningSet:
    sel = tuple(np.setdiff1d(np.arange(cond.n_total), idx) for idx in cond.indices)
    label = {"sign+": "sign-", "sign-": "sign+"}.get(cond.selector, f"not({cond.selector})")
    return ConditioningSet(label, sel, cond.n_total, cond.source_digest)


def eval_g(coefficients, lgdpd: LgdPdRegression | None, spec: BasisSpec, states, date: int,
           fallback_lgd: float = 1.0, fallback_pd: float = 1.0) -> np.ndarray:
    """``g(x, y) = f(x) LGD(x, y) PD(y)`` with PD and LGD clamped to [0, 1]."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    f = eval_basis(spec, states) @ np.asarray(coefficients, dtype=float)
    if lgdpd is None:
        return f * float(np.clip(fallback_lgd, 0, 1)) * float(np.clip(fallback_pd, 0, 1))
    lgd, pd, _ = lgdpd.factors(date, states, fallback_lgd, fallback_pd)
    return f * lgd * pd

"""First- and second-order sensitivities by the chain rule.

A sensitivity is assembled per path from exact basis derivatives and the
pathwise underlying Jacobian::

    d f / d s       = sum_b f_b x_b^s
    d2 f / d s d r  = sum_bc f_bc x_b^s x_c^r + sum_b f_b x_b^sr

Conditioning sets are always those of the unbumped portfolio. Because every
term is linear in the regression coefficients, each sensitivity is a
:class:`LinearMeasure`, and trade allocations reuse the same moments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, basis_derivatives, eval_basis
from .conditioning import ConditioningSet, sign_condition
from .credit import CreditCurve, XvaKind
from .errors import CubeMismatchError
from .margin import LifetimeMargins
from .measures import LinearMeasure, moments_from_rows
from .scenarios import ScenarioCube, ShockSet, UnderlyingJacobian
from .xva import LgdPdRegression, complement, date_factors, fallback_pd, portfolio_path_values


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    """One sensitivity of one measure.

    ``measure`` maps coefficients to the sensitivity, so
    ``measure.allocate(trade_coefficients)`` gives the per-trade breakdown.
    ``terms`` holds the product-rule pieces (they add up to ``measure``).
    """

    adjustment: str
    instruments: tuple[str, ...]
    per_date: np.ndarray
    total: float
    measure: LinearMeasure
    terms: dict = field(default_factory=dict, repr=False)
    conditioning: object = field(default=None, repr=False)

    def term_totals(self, coefficients) -> dict:
        return {k: m.value(coefficients) for k, m in self.terms.items()}

    def per_trade(self, trade_coefficients) -> np.ndarray:
        return self.measure.allocate(trade_coefficients)

    def rows(self, dates) -> list[tuple]:
        """CSV rows ``(adjustment, instrument, instrument2, date, contribution)``."""
        s2 = self.instruments[1] if len(self.instruments) > 1 else ""
        out = [(self.adjustment, self.instruments[0], s2, float(dates[k]), float(v))
               for k, v in enumerate(self.per_date)]
        out.append((self.adjustment, self.instruments[0], s2, "total", float(self.total)))
        return out


def _check_jac(jac: UnderlyingJacobian, cube: ScenarioCube):
    if jac.cube_digest != cube.digest:
        raise CubeMismatchError("jacobian was built on a different scenario cube")


def chain_rows(spec: BasisSpec, states, dx) -> np.ndarray:
    """``sum_b df_l/dx_b dx_b/ds`` per state, ``(n, L)``."""
    return np.einsum("nlu,nu->nl", basis_derivatives(spec, states, 1), dx)


def chain2_rows(spec: BasisSpec, states, dxs, dxr, dxsr) -> np.ndarray:
    """Second-order chain rule per state, ``(n, L)``."""
    hess = np.einsum("nluv,nu,nv->nl", basis_derivatives(spec, states, 2), dxs, dxr)
    return hess + chain_rows(spec, states, dxsr)


def _report(name, insts, coefficients, measure, terms=None, cond=None):
    per_date = measure.per_date(coefficients)
    return SensitivityReport(name, tuple(insts), per_date, math.fsum(per_date.tolist()),
                             measure, terms or {}, cond)


def _all_paths(cube: ScenarioCube) -> ConditioningSet:
    idx = np.arange(cube.n_base)
    return ConditioningSet("sign*", tuple(idx for _ in range(cube.n_dates)), cube.n_base)


def value_delta(coefficients, spec: BasisSpec, cube: ScenarioCube, jac: UnderlyingJacobian,
                instrument: str, cond: ConditioningSet | None = None) -> SensitivityReport:
    """Per-date ``(1/n) sum_{j in set} df/ds (x_j)``; every measure path by default."""
    _check_jac(jac, cube)
    cond = cond or _all_paths(cube)
    dx = jac.d1(instrument)
    moments = np.zeros((cube.n_dates, spec.size))
    abs_m = np.zeros_like(moments)
    for k in range(cube.n_dates):
        idx = cond.indices[k]
        if idx.size:
            rows = chain_rows(spec, cube.values[idx, k], dx[idx, k])
            moments[k], abs_m[k] = moments_from_rows(rows, 1.0 / cond.n_total)
    lm = LinearMeasure(f"dV/d{instrument}", moments, abs_m)
    return _report("value", (instrument,), coefficients, lm, cond=cond)


def value_gamma(coefficients, spec: BasisSpec, cube: ScenarioCube, jac: UnderlyingJacobian,
                instruments: tuple[str, str], cond: ConditioningSet | None = None
                ) -> SensitivityReport:
    """Per-date average of the second-order chain rule over the set.

    Instruments are processed in sorted order so the result is exactly
    symmetric under exchange.
    """
    _check_jac(jac, cube)
    cond = cond or _all_paths(cube)
    s, r = sorted(instruments)
    dxs, dxr, dxsr = jac.d1(s), jac.d1(r), jac.d2(s, r)
    moments = np.zeros((cube.n_dates, spec.size))
    abs_m = np.zeros_like(moments)
    for k in range(cube.n_dates):
        idx = cond.indices[k]
        if idx.size:
            rows = chain2_rows(spec, cube.values[idx, k], dxs[idx, k], dxr[idx, k], dxsr[idx, k])
            moments[k], abs_m[k] = moments_from_rows(rows, 1.0 / cond.n_total)
    lm = LinearMeasure(f"d2V/d{s}d{r}", moments, abs_m)
    return _report("value", (s, r), coefficients, lm, cond=cond)


def _kind_sets(coefficients, spec, cube, kind: XvaKind, cond):
    """``[(sub_kind, set)]`` for the kind; FVA splits into FCA and DVA."""
    if cond is None:
        values = portfolio_path_values(coefficients, spec, cube)
        cond = sign_condition(values, "+" if kind is XvaKind.FVA else kind.selector)
    if kind is XvaKind.FVA:
        return [(XvaKind.DVA, complement(cond)), (XvaKind.FCA, cond)], cond
    return [(kind, cond)], cond


def _factor_derivs(lgdpd, k, states, credit, cube, kind, order):
    """LGD and PD as ``(value, grad, hess)``; constants when no regression."""
    n, n_u = states.shape
    if lgdpd is None:
        one = (np.ones(n), np.zeros((n, n_u)), np.zeros((n, n_u, n_u)))
        return one, one
    lgd, pd, _ = lgdpd.factors(k, states, credit.lgd(kind.party),
                               fallback_pd(cube, credit, kind, k), order=order)
    if order == 1:
        lgd = (lgd[0], lgd[1], np.zeros((n, n_u, n_u)))
        pd = (pd[0], pd[1], np.zeros((n, n_u, n_u)))
    return lgd, pd


_DELTA_TERMS = ("f", "lgd", "pd")


def xva_delta(coefficients, spec: BasisSpec, cube: ScenarioCube, jac: UnderlyingJacobian,
              credit: CreditCurve, kind: XvaKind, instrument: str,
              lgdpd: LgdPdRegression | None = None, cond: ConditioningSet | None = None,
              portfolio_coefficients=None) -> SensitivityReport:
    """First-order sensitivity of an adjustment with ``g = f LGD PD``.

    ``cond`` (or the set from ``portfolio_coefficients``) fixes the
    scenarios; by default it comes from ``coefficients`` themselves. For
    FVA pass the positive set. The three product-rule terms are returned
    separately in ``terms``; credit factors are constants in ``s``.
    """
    _check_jac(jac, cube)
    a = np.asarray(coefficients, dtype=float)
    src = a if portfolio_coefficients is None else np.asarray(portfolio_coefficients, float)
    parts, cond = _kind_sets(src, spec, cube, kind, cond)
    dx = jac.d1(instrument)
    size = spec.size
    mom = {t: np.zeros((cube.n_dates, size)) for t in _DELTA_TERMS}
    absm = {t: np.zeros((cube.n_dates, size)) for t in _DELTA_TERMS}
    for sub, c in parts:
        w = date_factors(cube, credit, sub, lgdpd is not None)
        for k in range(1, cube.n_dates):
            idx = c.indices[k]
            if idx.size == 0 or (w[k] == 0.0 and lgdpd is None):
                continue
            x, d = cube.values[idx, k], dx[idx, k]
            (lv, lg, _), (pv, pg, _) = _factor_derivs(lgdpd, k, x, credit, cube, sub, 1)
            f = eval_basis(spec, x)
            fs = chain_rows(spec, x, d)
            ls = np.einsum("nu,nu->n", lg, d)
            ps = np.einsum("nu,nu->n", pg, d)
            rows = {"f": fs * (lv * pv)[:, None],
                    "lgd": f * (ls * pv)[:, None],
                    "pd": f * (lv * ps)[:, None]}
            for t in _DELTA_TERMS:
                m, am = moments_from_rows(rows[t], w[k])
                mom[t][k] += m
                absm[t][k] += am
    terms = {t: LinearMeasure(f"{kind.name}:{t}", mom[t], absm[t]) for t in _DELTA_TERMS}
    total = LinearMeasure(f"d{kind.name}/d{instrument}", sum(mom.values()),
                          sum(absm.values()))
    return _report(kind.name, (instrument,), a, total, terms, cond)


def _gamma_rows(spec, x, dxs, dxr, dxsr, lgd, pd):
    """Termwise second derivative of ``f LGD PD`` per basis function."""
    lv, lg, lh = lgd
    pv, pg, ph = pd
    f = eval_basis(spec, x)
    fs, fr = chain_rows(spec, x, dxs), chain_rows(spec, x, dxr)
    fsr = chain2_rows(spec, x, dxs, dxr, dxsr)

    def first(g):
        return np.einsum("nu,nu->n", g, dxs), np.einsum("nu,nu->n", g, dxr)

    def second(g, h):
        return (np.einsum("nuv,nu,nv->n", h, dxs, dxr) + np.einsum("nu,nu->n", g, dxsr))

    ls, lr = first(lg)
    ps, pr = first(pg)
    lsr, psr = second(lg, lh), second(pg, ph)
    c = lambda v: v[:, None]
    return {
        "f''": fsr * c(lv * pv),
        "lgd''": f * c(lsr * pv),
        "pd''": f * c(lv * psr),
        "f'lgd'": fs * c(lr * pv) + fr * c(ls * pv),
        "f'pd'": fs * c(lv * pr) + fr * c(lv * ps),
        "lgd'pd'": f * c(ls * pr + lr * ps),
    }


_GAMMA_TERMS = ("f''", "lgd''", "pd''", "f'lgd'", "f'pd'", "lgd'pd'")


def xva_gamma(coefficients, spec: BasisSpec, cube: ScenarioCube, jac: UnderlyingJacobian,
              credit: CreditCurve, kind: XvaKind, instruments: tuple[str, str],
              lgdpd: LgdPdRegression | None = None, cond: ConditioningSet | None = None,
              portfolio_coefficients=None) -> SensitivityReport:
    """Second-order sensitivity of an adjustment.

    The product rule on ``g = f LGD PD`` gives three curvature terms and three
    symmetric pairs of first-order products; each is kept in ``terms``.
    """
    _check_jac(jac, cube)
    a = np.asarray(coefficients, dtype=float)
    src = a if portfolio_coefficients is None else np.asarray(portfolio_coefficients, float)
    parts, cond = _kind_sets(src, spec, cube, kind, cond)
    s, r = sorted(instruments)
    dxs, dxr, dxsr = jac.d1(s), jac.d1(r), jac.d2(s, r)
    size = spec.size
    mom = {t: np.zeros((cube.n_dates, size)) for t in _GAMMA_TERMS}
    absm = {t: np.zeros((cube.n_dates, size)) for t in _GAMMA_TERMS}
    for sub, c in parts:
        w = date_factors(cube, credit, sub, lgdpd is not None)
        for k in range(1, cube.n_dates):
            idx = c.indices[k]
            if idx.size == 0 or (w[k] == 0.0 and lgdpd is None):
                continue
            x = cube.values[idx, k]
            lgd, pd = _factor_derivs(lgdpd, k, x, credit, cube, sub, 2)
            rows = _gamma_rows(spec, x, dxs[idx, k], dxr[idx, k], dxsr[idx, k], lgd, pd)
            for t in _GAMMA_TERMS:
                m, am = moments_from_rows(rows[t], w[k])
                mom[t][k] += m
                absm[t][k] += am
    terms = {t: LinearMeasure(f"{kind.name}:{t}", mom[t], absm[t]) for t in _GAMMA_TERMS}
    total = LinearMeasure(f"d2{kind.name}/d{s}d{r}", sum(mom.values()), sum(absm.values()))
    return _report(kind.name, (s, r), a, total, terms, cond)


def _set_weights(cond: ConditioningSet, shocks: ShockSet) -> tuple[np.ndarray, np.ndarray]:
    idx = cond.indices[0]
    w = shocks.weights[idx]
    return idx, w / math.fsum(w.tolist())


def es_sensitivity(coefficients, spec: BasisSpec, shocks: ShockSet, cond: ConditioningSet,
                   base_dx, instrument: str = "s", base_dx_r=None, base_dx_sr=None
                   ) -> SensitivityReport:
    """Sensitivity of ES (or VaR) on its frozen tail set.

    The loss of scenario ``i`` is ``F(base) - F(shock_i(base))``; its
    derivative follows the base state through ``base_dx`` (``dx/ds`` of the
    base state). Passing ``base_dx_r`` and ``base_dx_sr`` gives the
    second-order sensitivity instead. The average uses the set's own weight.
    """
    base = np.asarray(shocks.base, dtype=float)[None, :]
    idx, w = _set_weights(cond, shocks)
    shocked = shocks.apply(base[0])[idx]
    dxs = np.asarray(base_dx, dtype=float)[None, :]
    ds = shocks.apply_derivative(dxs[0])[idx]
    if base_dx_r is None:
        rows = chain_rows(spec, base, dxs) - chain_rows(spec, shocked, ds)
        insts = (instrument,)
    else:
        dxr = np.asarray(base_dx_r, dtype=float)[None, :]
        dxsr = np.asarray(base_dx_sr, dtype=float)[None, :]
        dr = shocks.apply_derivative(dxr[0])[idx]
        dsr = shocks.apply_derivative(dxsr[0])[idx]
        rows = (chain2_rows(spec, base, dxs, dxr, dxsr)
                - chain2_rows(spec, shocked, ds, dr, dsr))
        insts = (instrument, instrument)
    m, am = moments_from_rows(rows * w[:, None])
    lm = LinearMeasure(f"dES/d{instrument}", m[None, :], am[None, :])
    a = np.asarray(coefficients, dtype=float).reshape(1, -1)
    return _report("ES", insts, a, lm, cond=cond)


def lifetime_margin_delta(coefficients, spec: BasisSpec, cube: ScenarioCube,
                          lifetime: LifetimeMargins, shocks: ShockSet,
                          jac: UnderlyingJacobian, instrument: str, weights=None
                          ) -> SensitivityReport:
    """First-order sensitivity of the lifetime margin profile on frozen tails.

    With ``weights`` (the MVA weights per date) this is the MVA delta.
    """
    _check_jac(jac, cube)
    n = cube.n_base
    dx = jac.d1(instrument)
    moments = np.zeros((cube.n_dates, spec.size))
    abs_m = np.zeros_like(moments)
    for k in range(1, cube.n_dates):
        x = cube.values[:n, k]
        d = dx[:n, k]
        mask = lifetime.tail_sets[:, k]
        sw = mask * shocks.weights[None, :]
        sw = sw / sw.sum(axis=1, keepdims=True)
        base_rows = chain_rows(spec, x, d)
        shocked = shocks.apply(x)
        dsh = shocks.apply_derivative(d)
        grads = basis_derivatives(spec, shocked, 1)
        shock_rows = np.einsum("nslu,nsu->nsl", grads, dsh)
        rows = base_rows - np.einsum("ns,nsl->nl", sw, shock_rows)
        moments[k], abs_m[k] = moments_from_rows(rows, 1.0 / n)
    lm = LinearMeasure(f"dIM/d{instrument}", moments, abs_m)
    name = "IM"
    if weights is not None:
        lm = lm.scaled(weights, name=f"dMVA/d{instrument}")
        name = "MVA"
    return _report(name, (instrument,), coefficients, lm)


__all__ = [
    "SensitivityReport", "value_delta", "value_gamma", "xva_delta", "xva_gamma",
    "es_sensitivity", "lifetime_margin_delta", "chain_rows", "chain2_rows",
]

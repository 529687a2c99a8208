"""Trade-level allocation, regrouping and incremental portfolio updates.

Every allocated figure applies one set of conditioned moments to each
trade's coefficients. The portfolio figure applies the same moments to the
portfolio coefficients, so the allocations add up to it up to rounding; the
rounding residual is stored on the report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .basis import BasisSpec, eval_basis
from .conditioning import ConditioningSet, sign_condition
from .credit import CreditCurve, XvaKind
from .errors import AuditError, ConfigurationError, CubeMismatchError
from .margin import (compute_initial_margin, lifetime_margins, margin_measure, mva_weights,
                     path_margin_rows, shocked_rows, tail_mask)
from .measures import LinearMeasure
from .numerics import array_digest
from .regression import RegressionSet, portfolio_coefficients
from .scenarios import ScenarioCube, ShockSet, UnderlyingJacobian
from .sensitivities import xva_delta, xva_gamma
from .xva import (LgdPdRegression, complement, date_factors, date_moment, path_factors,
                  portfolio_path_values, xva_measure)


@dataclass(frozen=True, eq=False)
class AllocationReport:
    """Allocated values of one measure.

    ``labels``/``values`` are the reported entries (trades or groups).
    ``trade_ids``/``trade_values`` keep the trade-level figures so that any
    regrouping sums the same numbers in the same order.
    """

    measure: str
    labels: tuple[str, ...]
    values: np.ndarray
    total: float
    trade_ids: tuple[str, ...]
    trade_values: np.ndarray
    scale: float = 0.0
    conditioning: object = field(default=None, repr=False)
    work: dict = field(default_factory=dict)

    @property
    def allocated_total(self) -> float:
        return math.fsum(self.trade_values.tolist())

    @property
    def residual(self) -> float:
        """Portfolio figure minus the sum of allocations."""
        return self.total - self.allocated_total

    def as_dict(self) -> dict:
        return {
            "measure": self.measure, "total": self.total, "residual": self.residual,
            "allocations": {k: float(v) for k, v in zip(self.labels, self.values)},
        }

    def rows(self) -> list[tuple]:
        out = [(self.measure, k, float(v)) for k, v in zip(self.labels, self.values)]
        out.append((self.measure, "total", float(self.total)))
        return out


def _report(name, regset: RegressionSet, lm: LinearMeasure, cond=None, work=None,
            portfolio=None) -> AllocationReport:
    a = portfolio_coefficients(regset) if portfolio is None else portfolio
    values = lm.allocate(regset.coefficients) if len(regset.trade_ids) else np.zeros(0)
    return AllocationReport(name, regset.trade_ids, values, lm.value(a), regset.trade_ids,
                            values, lm.scale(a), cond, dict(work or {}))


def _audit(regset: RegressionSet, spec: BasisSpec, cube: ScenarioCube, cond: ConditioningSet):
    if regset.cube_digest != cube.digest:
        raise CubeMismatchError("regressions were fitted on a different scenario cube")
    values = portfolio_path_values(portfolio_coefficients(regset), spec, cube)
    if cond.source_digest != array_digest(values):
        raise AuditError("conditioning set was not built from this portfolio's values")


def allocate_value(regset: RegressionSet, cond: ConditioningSet, cube: ScenarioCube,
                   credit: CreditCurve, kind: XvaKind, lgdpd: LgdPdRegression | None = None
                   ) -> AllocationReport:
    """Per-trade adjustment on the portfolio's conditioning set.

    For FVA pass the positive set; the report covers DVA + FCA.
    """
    spec = regset.spec
    _audit(regset, spec, cube, cond)
    if kind is XvaKind.FVA:
        lm = (xva_measure(spec, cube, credit, XvaKind.DVA, complement(cond), lgdpd)[0]
              + xva_measure(spec, cube, credit, XvaKind.FCA, cond, lgdpd)[0])
    else:
        lm = xva_measure(spec, cube, credit, kind, cond, lgdpd)[0]
    return _report(kind.name, regset, lm, cond)


def allocate_sensitivity(regset: RegressionSet, cond: ConditioningSet, cube: ScenarioCube,
                         jac: UnderlyingJacobian, credit: CreditCurve, kind: XvaKind,
                         instrument: str | tuple[str, str],
                         lgdpd: LgdPdRegression | None = None) -> AllocationReport:
    """Per-trade adjustment sensitivity; a pair of instruments gives gamma."""
    spec = regset.spec
    _audit(regset, spec, cube, cond)
    a = portfolio_coefficients(regset)
    if isinstance(instrument, str):
        rep = xva_delta(a, spec, cube, jac, credit, kind, instrument, lgdpd, cond)
        name = f"d{kind.name}/d{instrument}"
    else:
        rep = xva_gamma(a, spec, cube, jac, credit, kind, tuple(instrument), lgdpd, cond)
        name = f"d2{kind.name}/d{instrument[0]}d{instrument[1]}"
    return _report(name, regset, rep.measure, cond, portfolio=a)


def allocate_es(regset: RegressionSet, shocks: ShockSet, alpha: float, date: int = 0,
                measure: str = "ES") -> AllocationReport:
    """Per-trade average loss over the portfolio's ES (or VaR) set.

    Trades are valued only at the selected shocks; ``work`` counts those
    valuations (``|set| x |trades|``) next to the shock count a full
    revaluation would need.
    """
    spec = regset.spec
    a = portfolio_coefficients(regset)[date]
    im = compute_initial_margin(a, spec, shocks, alpha, measure)
    idx = im.conditioning.indices[0]
    w = shocks.weights[idx]
    w = w / math.fsum(w.tolist())
    base = eval_basis(spec, np.asarray(shocks.base, dtype=float))
    shocked = eval_basis(spec, shocks.apply(shocks.base)[idx])
    coefs = regset.coefficients[:, date, :]
    trade_losses = (base @ coefs.T)[None, :] - shocked @ coefs.T
    values = np.array([math.fsum((w * trade_losses[:, i]).tolist())
                       for i in range(coefs.shape[0])])
    work = {
        "trade_valuations": int(trade_losses.size),
        "base_valuations": int(coefs.shape[0]),
        "scenarios_total": int(shocks.n),
        "scenarios_selected": int(idx.size),
        "full_revaluation_valuations": int(shocks.n * coefs.shape[0]),
    }
    scale = math.fsum(np.abs(w[:, None] * trade_losses).ravel().tolist())
    return AllocationReport(f"IM-{im.measure_kind}", regset.trade_ids, values, im.margin,
                            regset.trade_ids, values, max(scale, im.measure.scale(a[None, :])),
                            im.conditioning, work)


def allocate_mva(regset: RegressionSet, cube: ScenarioCube, shocks: ShockSet, alpha: float,
                 spread, credit: CreditCurve, measure: str = "ES",
                 survival: bool = True) -> AllocationReport:
    """Per-trade MVA on the portfolio's per-path tail sets.

    Each layer keeps its own normalisation: set weight inside the per-path
    ES, ``1/n`` across paths, and the MVA date weights outside.
    """
    spec = regset.spec
    a = portfolio_coefficients(regset)
    life = lifetime_margins(a, spec, cube, shocks, alpha, measure)
    lm = life.measure.scaled(mva_weights(cube.dates, spread, credit, survival), name="MVA")
    return _report("MVA", regset, lm, life.tail_sets)


def regroup(report: AllocationReport, grouping: Mapping[str, str]) -> AllocationReport:
    """Sum trade allocations into groups, in trade order within each group.

    Groups are listed in sorted order. The trade-level values are carried
    over unchanged, so ``allocated_total`` is identical for every grouping.
    """
    missing = [t for t in report.trade_ids if t not in grouping]
    if missing:
        raise ConfigurationError(f"grouping does not cover trades {missing}")
    groups = sorted({grouping[t] for t in report.trade_ids})
    members = {g: [] for g in groups}
    for t, v in zip(report.trade_ids, report.trade_values.tolist()):
        members[grouping[t]].append(v)
    values = np.array([math.fsum(members[g]) for g in groups])
    return replace(report, labels=tuple(groups), values=values)


@dataclass(frozen=True, eq=False)
class IncrementalBounds:
    """Flip thresholds for a new trade's value on every path and date.

    A selected path leaves the set when the new value is below its
    threshold; an unselected path joins when the new value reaches it
    (for the negative selector the inequalities reverse). The threshold
    value itself counts as ``V >= 0``.
    """

    thresholds: np.ndarray
    selected: np.ndarray
    selector: str

    def flips(self, new_values) -> np.ndarray:
        """Boolean mask of paths whose membership would change."""
        d = np.asarray(new_values, dtype=float).reshape(self.thresholds.shape)
        nonneg = d >= self.thresholds
        if self.selector == "-":
            return (~nonneg) != self.selected
        return nonneg != self.selected

    def respects(self, new_values) -> bool:
        return not bool(np.any(self.flips(new_values)))


def incremental_bounds(values, selector: str = "+") -> IncrementalBounds:
    """Thresholds ``-V`` with the current membership of each path."""
    v = np.asarray(values, dtype=float)
    if selector not in ("+", "-"):
        raise ConfigurationError(f"bounds need a sign selector, got {selector!r}")
    selected = v >= 0 if selector == "+" else v < 0
    return IncrementalBounds(-v, selected, selector)


# Incremental state -----------------------------------------------------------

_SIGN_KINDS = (XvaKind.CVA, XvaKind.DVA, XvaKind.FCA)


@dataclass(frozen=True, eq=False)
class MarginState:
    """Per-path lifetime-margin data kept for incremental updates."""

    shocks: ShockSet
    alpha: float
    kind: str
    losses: np.ndarray
    tail_sets: np.ndarray
    path_rows: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True, eq=False)
class PortfolioState:
    """Everything needed to add trades without revaluing the existing ones.

    ``basis_rows`` caches the basis on every measure path and date; it does
    not depend on any trade. ``factors`` holds ``LGD * PD`` per path for each
    sign kind when LGD/PD regressions are used.
    """

    cube_digest: str
    dates: np.ndarray
    regset: RegressionSet
    path_values: np.ndarray
    basis_rows: np.ndarray
    date_weights: dict
    factors: dict
    positive: ConditioningSet
    measures: dict
    margin: MarginState | None = None

    @property
    def coefficients(self) -> np.ndarray:
        return portfolio_coefficients(self.regset)

    def totals(self) -> dict:
        a = self.coefficients
        return {k: m.value(a) for k, m in self.measures.items()}

    def allocations(self) -> dict:
        return {k: m.allocate(self.regset.coefficients) for k, m in self.measures.items()}


def sign_measures(basis_rows, positive, date_weights, factors, size):
    neg = complement(positive)
    out = {}
    for kind in _SIGN_KINDS:
        cond = positive if kind.selector == "+" else neg
        w = date_weights[kind.name]
        fac = factors.get(kind.name)
        n_dates = basis_rows.shape[1]
        mom = np.zeros((n_dates, size))
        absm = np.zeros((n_dates, size))
        for k in range(1, n_dates):
            idx = cond.indices[k]
            f = None if fac is None else fac[idx, k]
            mom[k], absm[k] = date_moment(basis_rows[idx, k], f, w[k])
        out[kind.name] = LinearMeasure(kind.name, mom, absm)
    out["FVA"] = LinearMeasure("FVA", out["DVA"].moments + out["FCA"].moments,
                               out["DVA"].abs_moments + out["FCA"].abs_moments)
    return out


def build_state(regset: RegressionSet, cube: ScenarioCube, credit: CreditCurve,
                lgdpd: LgdPdRegression | None = None, shocks: ShockSet | None = None,
                alpha: float = 0.975, margin_measure_kind: str = "ES", spread=0.0,
                survival: bool = True) -> PortfolioState:
    """Price the portfolio once and keep what incremental updates reuse."""
    if regset.cube_digest != cube.digest:
        raise CubeMismatchError("regressions were fitted on a different scenario cube")
    spec = regset.spec
    a = portfolio_coefficients(regset)
    basis_rows = np.stack([eval_basis(spec, cube.base_states(k)) for k in range(cube.n_dates)],
                          axis=1)
    values = portfolio_path_values(a, spec, cube)
    positive = sign_condition(values, "+")
    weights, factors = {}, {}
    for kind in _SIGN_KINDS:
        weights[kind.name] = date_factors(cube, credit, kind, lgdpd is not None)
        if lgdpd is not None:
            fac = np.zeros((cube.n_base, cube.n_dates))
            for k in range(1, cube.n_dates):
                fac[:, k] = path_factors(cube, credit, kind, lgdpd, k)[0]
            factors[kind.name] = fac
    measures = sign_measures(basis_rows, positive, weights, factors, spec.size)
    margin = None
    if shocks is not None:
        life = lifetime_margins(a, spec, cube, shocks, alpha, margin_measure_kind,
                                keep_losses=True)
        w = mva_weights(cube.dates, spread, credit, survival)
        margin = MarginState(shocks, alpha, life.measure_kind, life.losses, life.tail_sets,
                             life.path_rows, w)
        measures["MVA"] = life.measure.scaled(w, name="MVA")
    return PortfolioState(cube.digest, cube.dates.copy(), regset, values, basis_rows, weights,
                          factors, positive, measures, margin)


@dataclass(frozen=True, eq=False)
class IncrementalResult:
    before: dict
    after: dict
    state: PortfolioState
    flips: dict
    allocation_changes: dict
    work: dict


def incremental_update(state: PortfolioState, delta: RegressionSet, cube: ScenarioCube
                       ) -> IncrementalResult:
    """Add the trades of ``delta`` to the portfolio held in ``state``.

    Path values are updated by addition, conditioning sets recomputed from
    the updated values, and moments rebuilt from the cached basis rows. No
    existing trade is valued on any path; only the new trades are.
    """
    if delta.cube_digest != state.cube_digest or cube.digest != state.cube_digest:
        raise CubeMismatchError("delta trades were not valued on the state's scenario cube")
    if delta.spec != state.regset.spec:
        raise ConfigurationError("delta uses a different basis")
    spec = state.regset.spec
    before = state.totals()
    before_alloc = state.allocations()
    work = {"original_trade_valuations": 0, "delta_trade_valuations": 0,
            "recomputed_path_margins": 0}
    if not delta.trade_ids:
        return IncrementalResult(before, before, state, {}, {}, work)

    a_delta = portfolio_coefficients(delta)
    n, n_dates = state.path_values.shape
    delta_values = np.einsum("nkl,kl->nk", state.basis_rows, a_delta)
    work["delta_trade_valuations"] += int(n * (n_dates) * len(delta.trade_ids))
    values = state.path_values + delta_values
    bounds = incremental_bounds(state.path_values, "+")
    flip_mask = bounds.flips(delta_values)
    positive = sign_condition(values, "+")
    measures = sign_measures(state.basis_rows, positive, state.date_weights, state.factors,
                              spec.size)
    flips = {"sign": [(int(j), int(k)) for j, k in zip(*np.nonzero(flip_mask))]}

    margin = state.margin
    if margin is not None:
        losses = margin.losses.copy()
        tails = margin.tail_sets.copy()
        path_rows = margin.path_rows.copy()
        changed = []
        for k in range(1, n_dates):
            rows = shocked_rows(spec, cube.base_states(k), margin.shocks)
            losses[:, k] += rows @ a_delta[k]
            work["delta_trade_valuations"] += int(n * margin.shocks.n * len(delta.trade_ids))
            mask = tail_mask(losses[:, k], margin.shocks.weights, margin.alpha, margin.kind)
            moved = np.flatnonzero(np.any(mask != tails[:, k], axis=1))
            if moved.size:
                path_rows[moved, k] = path_margin_rows(rows[moved], margin.shocks, mask[moved])
                tails[moved, k] = mask[moved]
                changed.extend((int(j), k) for j in moved)
        work["recomputed_path_margins"] = len(changed)
        flips["margin_tail"] = changed
        margin = replace(margin, losses=losses, tail_sets=tails, path_rows=path_rows)
        measures["MVA"] = margin_measure(path_rows, margin.kind).scaled(margin.weights,
                                                                          name="MVA")
    regset = state.regset.merged(delta)
    new = replace(state, regset=regset, path_values=values, positive=positive,
                  measures=measures, margin=margin)
    after = new.totals()
    after_alloc = new.allocations()
    changes = {}
    n_old = len(state.regset.trade_ids)
    for k, vals in after_alloc.items():
        changes[k] = {tid: float(vals[i] - before_alloc[k][i]) if i < n_old else float(vals[i])
                      for i, tid in enumerate(regset.trade_ids)}
    return IncrementalResult(before, after, new, flips, changes, work)


__all__ = [
    "AllocationReport", "allocate_value", "allocate_sensitivity", "allocate_es",
    "allocate_mva", "regroup", "IncrementalBounds", "incremental_bounds", "PortfolioState",
    "MarginState", "build_state", "sign_measures", "IncrementalResult", "incremental_update",
]

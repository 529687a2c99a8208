"""Oracle cross-checks of a configured run.

Each check compares an engine figure with an independent reference: the
pathwise brute-force adjustment, the FVA identity, the sum of allocations,
and bump-and-refit sensitivities with frozen conditioning sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import ConditioningSet
from .credit import XvaKind
from .numerics import ulp_close
from .oracle import (OracleConfig, brute_force_xva, bump_cross, bump_sensitivity,
                     stencil_floor, trade_path_values)
from .pipeline import RunResult, build_cube
from .pricing import price_portfolio
from .regression import FactorizationCache, portfolio_coefficients
from .xva import compute_xva


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    reference: float
    tolerance: float

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value),
                "reference": float(self.reference), "tolerance": float(self.tolerance)}


def parity_tolerance(result: RunResult, kind: XvaKind) -> float:
    """Three times (regression residual + Monte Carlo standard error) carried
    through the adjustment's date weights."""
    cube, credit = result.cube, result.inputs.credit
    w = np.abs(credit.xva_weights(cube.dates, kind if kind is not XvaKind.FVA else XvaKind.DVA))
    rms = result.regset.portfolio_residual_rms()
    values = trade_path_values(result.inputs.trades, cube, result.inputs.model).sum(axis=0) \
        if result.inputs.trades else np.zeros((cube.n_base, cube.n_dates))
    se = values.std(axis=0) / math.sqrt(cube.n_base)
    return 3.0 * float(np.sum(w * (rms + se)))


def xva_bump_pipeline(result: RunResult, kind: XvaKind, instrument: str,
                      cond: ConditioningSet | None, instrument2: str | None = None):
    """``f(h[, h2])``: regenerate the cube with bumped parameters and the same
    seed, refit with the unbumped pricing functions, and price the
    adjustment on ``cond`` (recomputed from bumped values when ``None``)."""
    inputs, cfg = result.inputs, result.config

    def run(h, h2=0.0):
        model = inputs.model.bumped(instrument, h)
        if instrument2 is not None:
            model = model.bumped(instrument2, h2)
        cube = build_cube(model, inputs.n_paths, inputs.dates, inputs.seed, cfg.augmentation)
        regset = price_portfolio(inputs.trades, cube, inputs.model, result.spec,
                                 FactorizationCache(cube, result.spec))
        a = portfolio_coefficients(regset)
        return compute_xva(a, result.spec, cube, inputs.credit, kind, cond=cond).total

    return run


def run_checks(result: RunResult, oracle: OracleConfig | None = None) -> list[CheckResult]:
    oracle = oracle or OracleConfig()
    out = []
    inputs = result.inputs
    for name, res in result.xva.items():
        kind = XvaKind.parse(name)
        ref = brute_force_xva(inputs.trades, result.cube, inputs.model, inputs.credit, kind)
        tol = parity_tolerance(result, kind)
        out.append(CheckResult(f"parity:{name}", abs(res.total - ref) <= tol, res.total,
                               float(ref), tol))
    if {"DVA", "FCA", "FVA"} <= set(result.xva):
        fva = result.xva["FVA"].total
        ref = math.fsum([result.xva["DVA"].total, result.xva["FCA"].total])
        scale = result.xva["FVA"].measure.scale(portfolio_coefficients(result.regset))
        out.append(CheckResult("identity:FVA=DVA+FCA", ulp_close(fva, ref, 8, scale), fva, ref,
                               scale))
    for rep in result.allocations:
        out.append(CheckResult(f"allocation:{rep.measure}",
                               ulp_close(rep.total, rep.allocated_total, 8, rep.scale),
                               rep.allocated_total, rep.total, rep.scale))
    for rep in result.sensitivities:
        kind = XvaKind.parse(rep.adjustment)
        cond = rep.conditioning if oracle.frozen_conditioning else None
        s = rep.instruments[0]
        if len(rep.instruments) == 1:
            ref = bump_sensitivity(xva_bump_pipeline(result, kind, s, cond), oracle.h)
        elif rep.instruments[1] == s:
            ref = bump_sensitivity(xva_bump_pipeline(result, kind, s, cond), oracle.h, order=2)
        else:
            f = xva_bump_pipeline(result, kind, s, cond, rep.instruments[1])
            ref = bump_cross(f, oracle.h)
        a = portfolio_coefficients(result.regset)
        size = compute_xva(a, result.spec, result.cube, inputs.credit, kind,
                           cond=rep.conditioning).measure.scale(a)
        tol = (oracle.rtol * max(abs(ref), abs(rep.total))
               + stencil_floor(size, oracle.h, len(rep.instruments)))
        out.append(CheckResult(f"bump:{rep.adjustment}/{'/'.join(rep.instruments)}",
                               abs(rep.total - ref) <= tol, rep.total, ref, tol))
    return out


__all__ = ["CheckResult", "run_checks", "xva_bump_pipeline", "parity_tolerance"]

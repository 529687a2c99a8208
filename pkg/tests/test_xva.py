"""Conditioned adjustments and the credit-factor function ``g``."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xvareg import (CreditCurve, LgdPdRegression, Trade, XvaKind, compute_xva, eval_basis,
                    portfolio_coefficients, sign_condition)
from xvareg.checks import parity_tolerance
from xvareg.errors import ConfigurationError
from xvareg.numerics import ulp_close
from xvareg.oracle import brute_force_xva, trade_path_values
from xvareg.pricing import price_portfolio
from xvareg.xva import eval_g, portfolio_path_values


@pytest.mark.parametrize("kind", list(XvaKind))
def test_zero_portfolio_has_zero_adjustments(kind, cube, spec, credit):
    res = compute_xva(np.zeros((cube.n_dates, spec.size)), spec, cube, credit, kind)
    assert res.total == 0.0


def test_no_counterparty_default_means_no_cva(regset, cube, spec):
    credit = CreditCurve.flat(lambda_b=0.01, lambda_c=0.0, rate=0.01)
    assert compute_xva(portfolio_coefficients(regset), spec, cube, credit,
                       XvaKind.CVA).total == 0.0


def test_signs_of_adjustments(regset, cube, spec, credit):
    a = portfolio_coefficients(regset)
    assert compute_xva(a, spec, cube, credit, XvaKind.CVA).total < 0
    assert compute_xva(a, spec, cube, credit, XvaKind.DVA).total > 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_fva_is_dva_plus_fca(seed, cube, spec, credit):
    a = np.random.default_rng(seed).normal(size=(cube.n_dates, spec.size))
    fva = compute_xva(a, spec, cube, credit, XvaKind.FVA)
    dva = compute_xva(a, spec, cube, credit, XvaKind.DVA)
    fca = compute_xva(a, spec, cube, credit, XvaKind.FCA)
    scale = fva.measure.scale(a)
    assert ulp_close(fva.total, math.fsum([dva.total, fca.total]), 8, scale)
    # the unconditioned all-path sum is the same quantity
    assert ulp_close(fva.total, fva.direct_total, 64, scale)


def test_single_forward_cva_matches_pathwise_oracle(model, cube, spec, credit):
    fwd = Trade.from_dict({"id": "f", "type": "forward", "underlying": "S", "strike": 100.0,
                           "dates": [2.0]})
    rs = price_portfolio([fwd], cube, model, spec)
    res = compute_xva(portfolio_coefficients(rs), spec, cube, credit, XvaKind.CVA)
    ref = brute_force_xva([fwd], cube, model, credit, XvaKind.CVA)
    vals = trade_path_values([fwd], cube, model)[0]
    w = np.abs(credit.xva_weights(cube.dates, XvaKind.CVA))
    tol = 3.0 * float(np.sum(w * (rs.residual_rms[0] + vals.std(axis=0) / math.sqrt(cube.n_base))))
    assert abs(res.total - ref) <= tol


@pytest.mark.parametrize("kind", list(XvaKind))
def test_in_span_portfolio_matches_oracle_tightly(kind, model, cube, spec, credit):
    fwds = [Trade.from_dict({"id": f"f{i}", "type": "forward", "underlying": "S",
                             "strike": k, "dates": [2.0], "direction": d})
            for i, (k, d) in enumerate([(95.0, "long"), (104.0, "short"), (90.0, "long")])]
    rs = price_portfolio(fwds, cube, model, spec)
    res = compute_xva(portfolio_coefficients(rs), spec, cube, credit, kind)
    ref = brute_force_xva(fwds, cube, model, credit, kind)
    assert abs(res.total - ref) <= 1e-8 * abs(ref)


def test_clamped_credit_factors_are_counted(regset, cube, spec, credit):
    pd = np.zeros((cube.n_dates, spec.size))
    pd[:, 0] = 0.5
    pd[:, 1] = 1.0
    reg = LgdPdRegression(spec, pd=pd)
    res = compute_xva(portfolio_coefficients(regset), spec, cube, credit, XvaKind.CVA, reg)
    z = (cube.values[:, 1:, 0] - spec.center[0]) / spec.scale[0]
    raw = 0.5 + z
    assert res.diagnostics["clamp_counts"]["pd"] == int(np.sum((raw < 0) | (raw > 1)))
    assert res.diagnostics["clamp_counts"]["lgd"] == 0


def test_constant_credit_regressions_reproduce_curve_weights(regset, cube, spec, credit):
    a = portfolio_coefficients(regset)
    dt = np.diff(cube.dates)
    lgd = np.zeros((cube.n_dates, spec.size))
    pd = np.zeros((cube.n_dates, spec.size))
    lgd[:, 0] = credit.lgd_c
    pd[1:, 0] = credit.lambda_c(cube.dates[1:]) * dt
    plain = compute_xva(a, spec, cube, credit, XvaKind.CVA)
    regressed = compute_xva(a, spec, cube, credit, XvaKind.CVA, LgdPdRegression(spec, lgd, pd))
    assert math.isclose(plain.total, regressed.total, rel_tol=1e-12)


def test_conditioning_set_must_match_cube(regset, cube, spec, credit):
    a = portfolio_coefficients(regset)
    with pytest.raises(ConfigurationError):
        compute_xva(a, spec, cube, credit, XvaKind.CVA, cond=sign_condition(np.ones(3)))
    with pytest.raises(ConfigurationError):
        compute_xva(a[:2], spec, cube, credit, XvaKind.CVA)


def test_portfolio_values_match_regression(regset, cube, spec):
    a = portfolio_coefficients(regset)
    v = portfolio_path_values(a, spec, cube)
    assert np.allclose(v[:, 3], eval_basis(spec, cube.values[:, 3]) @ a[3])


def test_g_neutral_and_zero_factors(spec):
    rng = np.random.default_rng(4)
    x = rng.normal([100, 0.02], [10, 0.01], (30, 2))
    c = rng.normal(size=spec.size)
    f = eval_basis(spec, x) @ c
    assert np.array_equal(eval_g(c, None, spec, x, 1, 1.0, 1.0), f)
    assert np.all(eval_g(c, None, spec, x, 1, 0.6, 0.0) == 0.0)
    zero_pd = LgdPdRegression(spec, pd=np.zeros((3, spec.size)))
    assert np.all(eval_g(c, zero_pd, spec, x, 1, 0.6, 0.3) == 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 10))
def test_g_is_linear_in_trades(seed, n, spec):
    rng = np.random.default_rng(seed)
    x = rng.normal([100, 0.02], [10, 0.01], (20, 2))
    coefs = rng.normal(size=(n, spec.size))
    lgd = np.zeros((2, spec.size))
    pd = np.zeros((2, spec.size))
    lgd[:, 0], pd[:, 0], pd[:, 1] = 0.6, 0.3, 0.05
    reg = LgdPdRegression(spec, lgd, pd)
    total = eval_g(np.array([math.fsum(col) for col in coefs.T]), reg, spec, x, 1)
    parts = np.array([eval_g(c, reg, spec, x, 1) for c in coefs])
    exact = np.array([math.fsum(col) for col in parts.T])
    scale = np.abs(parts).sum(axis=0) + np.abs(eval_basis(spec, x)) @ np.abs(coefs).sum(axis=0)
    for a, b, s in zip(total, exact, scale):
        assert ulp_close(a, b, 8, s)


def test_parity_tolerance_is_positive_for_risky_portfolio(toy_config):
    from xvareg.pipeline import RunConfig, run_pipeline
    result = run_pipeline(RunConfig.load(toy_config))
    assert parity_tolerance(result, XvaKind.CVA) > 0

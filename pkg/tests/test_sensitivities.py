"""Chain-rule sensitivities against hand expansions and bump-and-refit oracles."""
from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import states_cube
from xvareg import (BasisSpec, CreditCurve, LgdPdRegression, XvaKind, basis_derivatives,
                    eval_basis, generate_scenarios, generate_shock_scenarios,
                    portfolio_coefficients, sign_condition, underlying_jacobian)
from xvareg.errors import CubeMismatchError
from xvareg.margin import compute_initial_margin, lifetime_margins
from xvareg.numerics import ulp_close
from xvareg.oracle import bump_sensitivity, stencil_floor
from xvareg.pricing import price_portfolio
from xvareg.regression import FactorizationCache
from xvareg.scenarios import UnderlyingJacobian
from xvareg.sensitivities import (es_sensitivity, lifetime_margin_delta, value_delta,
                                  value_gamma, xva_delta, xva_gamma)


def manual_jac(cube, d1, d2=None, name="s"):
    d1 = np.broadcast_to(np.asarray(d1, dtype=float), cube.values.shape).copy()
    d2 = np.zeros_like(d1) if d2 is None else np.broadcast_to(d2, cube.values.shape).copy()
    return UnderlyingJacobian({name: d1}, {(name, name): d2}, cube.digest)


@pytest.fixture(scope="module")
def line_cube():
    x = np.random.default_rng(5).uniform(1.0, 3.0, (40, 4, 1))
    return states_cube(x)


def test_constant_regression_has_zero_delta(line_cube, credit):
    spec = BasisSpec((2,))
    a = np.zeros((4, 3))
    a[:, 0] = 2.5
    jac = manual_jac(line_cube, 1.7)
    assert np.all(value_delta(a, spec, line_cube, jac, "s").per_date == 0.0)
    assert xva_delta(a, spec, line_cube, jac, credit, XvaKind.CVA, "s").total == 0.0
    assert xva_gamma(a, spec, line_cube, jac, credit, XvaKind.CVA, ("s", "s")).total == 0.0


def test_identity_regression_counts_set_members(line_cube):
    spec = BasisSpec((1,))
    a = np.tile([0.0, 1.0], (4, 1))
    jac = manual_jac(line_cube, 1.0)
    marks = np.where(line_cube.values[:, :, 0] > 2.0, 1.0, -1.0)
    cond = sign_condition(marks)
    rep = value_delta(a, spec, line_cube, jac, "s", cond)
    for k in range(4):
        # one rounding: the exact count times the weight 1/n
        assert ulp_close(rep.per_date[k], cond.indices[k].size / 40, 1)


def test_square_has_gamma_two(line_cube):
    spec = BasisSpec((2,))
    a = np.tile([0.0, 0.0, 1.0], (4, 1))
    rep = value_gamma(a, spec, line_cube, manual_jac(line_cube, 1.0), ("s", "s"))
    assert np.all(rep.per_date == 2.0)


def test_linear_regression_gamma_is_mean_second_derivative(line_cube):
    spec = BasisSpec((1,))
    a = np.tile([0.3, 1.0], (4, 1))
    d2 = np.random.default_rng(8).normal(size=line_cube.values.shape)
    rep = value_gamma(a, spec, line_cube, manual_jac(line_cube, 0.4, d2), ("s", "s"))
    for k in range(4):
        ref = math.fsum(d2[:, k, 0].tolist()) / 40
        assert ulp_close(rep.per_date[k], ref, 8, np.abs(d2[:, k, 0]).mean())


def test_gamma_is_exactly_symmetric(regset, cube, model, spec, credit):
    jac = underlying_jacobian(cube, model, ["spot", "volS", "r0"])
    a = portfolio_coefficients(regset)
    for s, r in (("spot", "volS"), ("spot", "r0")):
        assert np.array_equal(value_gamma(a, spec, cube, jac, (s, r)).per_date,
                              value_gamma(a, spec, cube, jac, (r, s)).per_date)
        assert (xva_gamma(a, spec, cube, jac, credit, XvaKind.CVA, (s, r)).total
                == xva_gamma(a, spec, cube, jac, credit, XvaKind.CVA, (r, s)).total)


def test_xva_delta_with_constant_credit_scales_value_delta(regset, cube, model, spec, credit):
    jac = underlying_jacobian(cube, model, ["spot"], second_order=False)
    a = portfolio_coefficients(regset)
    rep = xva_delta(a, spec, cube, jac, credit, XvaKind.CVA, "spot")
    plain = value_delta(a, spec, cube, jac, "spot", rep.conditioning)
    w = credit.xva_weights(cube.dates, XvaKind.CVA)
    assert rep.per_date[0] == 0.0
    assert np.allclose(rep.per_date[1:], w[1:] * plain.per_date[1:], rtol=1e-12, atol=0)


def linear_credit(k_dates):
    lgd = np.tile([0.3, 0.1], (k_dates, 1))
    pd = np.tile([0.02, 0.005], (k_dates, 1))
    return LgdPdRegression(BasisSpec((1,)), lgd, pd)


def test_constant_exposure_delta_comes_from_credit_factors(line_cube, credit):
    spec = BasisSpec((1,))
    c = 4.0
    a = np.tile([c, 0.0], (4, 1))
    d = np.random.default_rng(9).uniform(0.5, 1.5, line_cube.values.shape)
    rep = xva_delta(a, spec, line_cube, manual_jac(line_cube, d), credit, XvaKind.CVA, "s",
                    lgdpd=linear_credit(4))
    terms = rep.term_totals(a)
    assert terms["f"] == 0.0
    assert ulp_close(rep.total, math.fsum([terms["lgd"], terms["pd"]]), 8,
                     rep.measure.scale(a))
    disc = credit.discount(0.0, line_cube.dates)
    for k in range(1, 4):
        x, dk = line_cube.values[:, k, 0], d[:, k, 0]
        lgd_term = -disc[k] / 40 * math.fsum((c * 0.1 * dk * (0.02 + 0.005 * x)).tolist())
        pd_term = -disc[k] / 40 * math.fsum((c * (0.3 + 0.1 * x) * 0.005 * dk).tolist())
        assert math.isclose(rep.terms["lgd"].per_date(a)[k], lgd_term, rel_tol=1e-13)
        assert math.isclose(rep.terms["pd"].per_date(a)[k], pd_term, rel_tol=1e-13)


def test_gamma_of_quadratic_g_is_only_cross_curvature(line_cube, credit):
    # f = x, LGD = 0.3 + 0.1 x, PD = 0.02: g = 0.02 (0.3 x + 0.1 x^2), g'' = 0.004
    spec = BasisSpec((1,))
    a = np.tile([0.0, 1.0], (4, 1))
    reg = LgdPdRegression(spec, np.tile([0.3, 0.1], (4, 1)), np.tile([0.02, 0.0], (4, 1)))
    rep = xva_gamma(a, spec, line_cube, manual_jac(line_cube, 1.0), credit, XvaKind.CVA,
                    ("s", "s"), lgdpd=reg)
    terms = rep.term_totals(a)
    for t in ("f''", "lgd''", "pd''", "f'pd'", "lgd'pd'"):
        assert terms[t] == 0.0
    disc = credit.discount(0.0, line_cube.dates)
    for k in range(1, 4):
        assert math.isclose(rep.per_date[k], -0.004 * disc[k], rel_tol=1e-13)


def test_jacobian_from_another_cube_is_rejected(regset, cube, model, spec):
    other = generate_scenarios(model, 50, cube.dates, seed=99)
    jac = underlying_jacobian(other, model, ["spot"])
    with pytest.raises(CubeMismatchError):
        value_delta(portfolio_coefficients(regset), spec, cube, jac, "spot")


@pytest.fixture(scope="module")
def small_setup(model, trades, spec):
    # forward and swaplet: targets inside (or within 1e-6 of) the basis span, so a
    # refit on bumped states moves no coefficients
    near_span = [trades[0], trades[2]]
    cube = generate_scenarios(model, 400, np.linspace(0.0, 2.0, 5), seed=21)
    return cube, price_portfolio(near_span, cube, model, spec), near_span


@pytest.mark.parametrize("inst", ["spot", "volS", "r0"])
def test_value_delta_matches_bump_and_refit(inst, small_setup, model, spec):
    cube, rs, trades = small_setup
    a = portfolio_coefficients(rs)
    jac = underlying_jacobian(cube, model, [inst], second_order=False)
    rep = value_delta(a, spec, cube, jac, inst)

    def mean_value(k):
        def run(h):
            bumped = generate_scenarios(model.bumped(inst, h), cube.n_base, cube.dates, 21)
            coef = portfolio_coefficients(price_portfolio(trades, bumped, model, spec,
                                                          FactorizationCache(bumped, spec)))
            vals = eval_basis(spec, bumped.values[:, k]) @ coef[k]
            return math.fsum(vals.tolist()) / bumped.n_base
        return run

    h = 1e-5
    for k in range(1, cube.n_dates):
        ref = bump_sensitivity(mean_value(k), h)
        scale = float(np.sum(np.abs(eval_basis(spec, cube.values[:, k])) @ np.abs(a[k])))
        scale /= cube.n_base
        tol = 1e-3 * max(abs(ref), abs(rep.per_date[k])) + stencil_floor(scale, h, 1)
        assert abs(rep.per_date[k] - ref) <= tol, (k, rep.per_date[k], ref)


def test_identity_shocks_have_zero_es_sensitivity(regset, spec, model):
    ident = generate_shock_scenarios([100.0, 0.02], [{"name": str(i), "displacements": {}}
                                                     for i in range(5)], model.names)
    a = portfolio_coefficients(regset)[0]
    im = compute_initial_margin(a, spec, ident, 0.6)
    rep = es_sensitivity(a, spec, ident, im.conditioning, [1.0, 0.0])
    assert rep.total == 0.0


def test_single_tail_scenario_es_sensitivity_by_hand(regset, spec, model):
    one = generate_shock_scenarios([100.0, 0.02], [
        {"name": "up", "displacements": {"S": 1.1, "r": 0.9}},
        {"name": "down", "displacements": {"S": 0.9, "r": 1.1}}], model.names)
    a = portfolio_coefficients(regset)[0]
    im = compute_initial_margin(a, spec, one, 0.975)
    assert im.conditioning.indices[0].tolist() == [int(np.argmax(im.losses))]
    f = one.factors[im.conditioning.indices[0][0]]
    d = np.array([1.0, 0.0])
    rep = es_sensitivity(a, spec, one, im.conditioning, d)
    g_base = basis_derivatives(spec, np.array([100.0, 0.02]), 1) @ d
    g_shock = basis_derivatives(spec, np.array([100.0, 0.02]) * f, 1) @ (d * f)
    assert math.isclose(rep.total, float(a @ g_base - a @ g_shock), rel_tol=1e-12)


@pytest.mark.parametrize("d", [[1.0, 0.0], [0.0, 1.0], [0.5, 0.3]])
def test_es_sensitivity_matches_bump_on_frozen_set(d, regset, spec, shocks):
    a = portfolio_coefficients(regset)[0]
    im = compute_initial_margin(a, spec, shocks, 0.6)
    idx = im.conditioning.indices[0]
    d = np.array(d) * np.array([1.0, 0.001])
    rep = es_sensitivity(a, spec, shocks, im.conditioning, d)

    def es(h):
        base = shocks.base + h * d
        moved = compute_initial_margin(a, spec, shocks.rebased(base), 0.6)
        return math.fsum(moved.losses[idx].tolist()) / idx.size

    h = 1e-4
    ref = bump_sensitivity(es, h)
    scale = rep.measure.scale(a[None, :])
    assert abs(rep.total - ref) <= 1e-6 * abs(ref) + stencil_floor(scale + abs(im.margin), h, 1)


def test_es_second_order_matches_bump(regset, spec, shocks):
    a = portfolio_coefficients(regset)[0]
    im = compute_initial_margin(a, spec, shocks, 0.6)
    idx = im.conditioning.indices[0]
    d = np.array([1.0, 0.0])
    rep = es_sensitivity(a, spec, shocks, im.conditioning, d, base_dx_r=d,
                         base_dx_sr=np.zeros(2))

    def es(h):
        moved = compute_initial_margin(a, spec, shocks.rebased(shocks.base + h * d), 0.6)
        return math.fsum(moved.losses[idx].tolist()) / idx.size

    ref = bump_sensitivity(es, 1e-2, order=2)
    assert abs(rep.total - ref) <= 1e-6 * max(abs(ref), 1e-3)


def test_lifetime_margin_delta_matches_frozen_tail_bump(regset, cube, model, spec, shocks):
    a = portfolio_coefficients(regset)
    life = lifetime_margins(a, spec, cube, shocks, 0.6)
    jac = underlying_jacobian(cube, model, ["spot"], second_order=False)
    rep = lifetime_margin_delta(a, spec, cube, life, shocks, jac, "spot")
    n = cube.n_base
    d = jac.d1("spot")
    for k in range(1, cube.n_dates):
        mask = life.tail_sets[:, k]
        sw = mask * shocks.weights[None, :]
        sw = sw / sw.sum(axis=1, keepdims=True)

        def margin(h):
            x = cube.values[:n, k] + h * d[:n, k]
            base = eval_basis(spec, x) @ a[k]
            shocked = eval_basis(spec, shocks.apply(x)) @ a[k]
            per_path = np.sum(sw * (base[:, None] - shocked), axis=1)
            return math.fsum(per_path.tolist()) / n

        h = 1e-4
        ref = bump_sensitivity(margin, h)
        floor = stencil_floor(float(np.abs(life.margins[k])) * 10, h, 1)
        assert abs(rep.per_date[k] - ref) <= 1e-6 * abs(ref) + floor


def test_mva_delta_scales_lifetime_delta(regset, cube, model, spec, shocks, credit):
    from xvareg.margin import mva_weights
    a = portfolio_coefficients(regset)
    life = lifetime_margins(a, spec, cube, shocks, 0.6)
    jac = underlying_jacobian(cube, model, ["spot"], second_order=False)
    w = mva_weights(cube.dates, 0.01, credit)
    im = lifetime_margin_delta(a, spec, cube, life, shocks, jac, "spot")
    mva = lifetime_margin_delta(a, spec, cube, life, shocks, jac, "spot", weights=w)
    assert mva.adjustment == "MVA"
    assert np.allclose(mva.per_date, w * im.per_date, rtol=1e-13, atol=0)


def test_flat_credit_curve_has_no_lgd_pd_terms(regset, cube, model, spec):
    credit = CreditCurve.flat(lambda_b=0.01, lambda_c=0.02, rate=0.01)
    jac = underlying_jacobian(cube, model, ["spot"], second_order=False)
    a = portfolio_coefficients(regset)
    rep = xva_delta(a, spec, cube, jac, credit, XvaKind.DVA, "spot")
    terms = rep.term_totals(a)
    assert terms["lgd"] == 0.0 and terms["pd"] == 0.0
    assert rep.total == terms["f"]

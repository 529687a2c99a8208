"""Initial margin, lifetime margins and MVA."""
from __future__ import annotations

import math

import numpy as np
import pytest

from xvareg import (CreditCurve, Trade, augment_state_space, generate_scenarios,
                    generate_shock_scenarios, portfolio_coefficients)
from xvareg.errors import ConfigurationError
from xvareg.margin import (compute_initial_margin, compute_mva, lifetime_margins,
                           mva_weights)
from xvareg.oracle import full_revaluation_margin, lifetime_margin_oracle
from xvareg.pricing import price_portfolio


def test_identity_shocks_give_zero_margin(regset, spec, model):
    shocks = generate_shock_scenarios([100.0, 0.02], [{"name": str(i), "displacements": {}}
                                                      for i in range(5)], model.names)
    im = compute_initial_margin(portfolio_coefficients(regset)[0], spec, shocks, 0.6)
    assert im.margin == 0.0


def test_es_sixty_percent_averages_two_worst_losses(regset, spec, shocks):
    im = compute_initial_margin(portfolio_coefficients(regset)[0], spec, shocks, 0.6)
    worst = np.sort(im.losses)[-2:]
    assert im.conditioning.size() == 2
    assert math.isclose(im.margin, worst.mean(), rel_tol=1e-13)
    var = compute_initial_margin(portfolio_coefficients(regset)[0], spec, shocks, 0.6, "VaR")
    assert var.margin == pytest.approx(worst[0], rel=1e-13)


def augmented_grid(cube, subsample=20):
    disp = [{"S": fs, "r": fr} for fs in np.linspace(0.85, 1.15, 7)
            for fr in np.linspace(0.7, 1.4, 5)]
    return augment_state_space(cube, {"displacements": disp, "subsample": subsample})


def test_margin_matches_full_revaluation(cube, spec, shocks, trades, model):
    aug = augmented_grid(cube)
    rs = price_portfolio(trades, aug, model, spec)
    im = compute_initial_margin(portfolio_coefficients(rs)[0], spec, shocks, 0.6)
    ref, chosen = full_revaluation_margin(trades, model, shocks, 0.6)
    assert sorted(chosen) == im.conditioning.indices[0].tolist()
    # each loss carries the fit error at the base state and at a shocked state
    assert abs(im.margin - ref) <= 3 * rs.portfolio_residual_rms()[0]


def test_unaugmented_valuation_date_is_rank_deficient(cube, spec):
    from xvareg import FactorizationCache
    cache = FactorizationCache(cube, spec)
    assert cache.get(0).rank == 1
    assert FactorizationCache(augmented_grid(cube), spec).get(0).rank == spec.size


def test_unknown_measure_and_empty_inputs(regset, spec, shocks):
    with pytest.raises(ConfigurationError):
        compute_initial_margin(portfolio_coefficients(regset)[0], spec, shocks, 0.6, "CVaR")
    with pytest.raises(ConfigurationError):
        compute_initial_margin(portfolio_coefficients(regset)[0], spec, shocks, 1.0)


def test_zero_spread_gives_zero_mva(credit):
    res = compute_mva(np.ones(5), np.linspace(0, 2, 5), 0.0, credit)
    assert res.total == 0.0


def test_constant_margin_closed_form():
    dates = np.linspace(0, 3.0, 13)
    credit = CreditCurve.flat()
    res = compute_mva(np.full(13, 7.0), dates, 0.02, credit)
    assert math.isclose(res.total, 0.02 * 7.0 * 3.0, rel_tol=1e-14)


def test_mva_weights_discounting():
    dates = np.array([0.0, 1.0, 2.0])
    credit = CreditCurve.flat(lambda_b=0.01, lambda_c=0.02, rate=0.03)
    w = mva_weights(dates, 0.01, credit)
    assert w[0] == 0.0
    assert np.allclose(w[1:], 0.01 * np.exp(-0.06 * dates[1:]))
    riskless = mva_weights(dates, 0.01, credit, survival=False)
    assert np.allclose(riskless[1:], 0.01 * np.exp(-0.03 * dates[1:]))
    with pytest.raises(ConfigurationError):
        compute_mva(np.ones(2), dates, 0.01, credit)


def test_lifetime_margins_match_revaluation_oracle(model):
    dates = [0.0, 0.5, 1.0]
    cube = generate_scenarios(model, 60, dates, seed=6)
    from xvareg import BasisSpec
    spec = BasisSpec((3, 3), max_total_degree=3, center=(100.0, 0.025), scale=(25.0, 0.01))
    trades = [Trade.from_dict({"id": "f", "type": "forward", "underlying": "S",
                               "strike": 100.0, "dates": [1.0]}),
              Trade.from_dict({"id": "g", "type": "forward", "underlying": "S",
                               "strike": 90.0, "dates": [1.0], "direction": "short",
                               "notional": 0.4})]
    rs = price_portfolio(trades, cube, model, spec)
    shocks = generate_shock_scenarios([100.0, 0.02], [
        {"name": f"s{i}", "displacements": {"S": f}}
        for i, f in enumerate([0.9, 0.95, 1.0, 1.05, 1.1])], model.names)
    life = lifetime_margins(portfolio_coefficients(rs), spec, cube, shocks, 0.6)
    assert life.margins[0] == 0.0
    for k in (1, 2):
        ref = lifetime_margin_oracle(trades, cube, model, shocks, 0.6, k)
        assert abs(life.margins[k] - ref) <= 1e-9 * abs(ref)


def test_lifetime_margin_measure_is_linear(regset, cube, spec, shocks):
    a = portfolio_coefficients(regset)
    life = lifetime_margins(a, spec, cube, shocks, 0.6, keep_losses=True)
    assert np.allclose(life.measure.per_date(a), life.margins)
    assert np.allclose(life.path_margins.mean(axis=0)[1:], life.margins[1:])
    assert life.tail_sets[:, 1:].sum(axis=2).max() == 2
    assert life.losses.shape == (cube.n_base, cube.n_dates, shocks.n)

"""Fit every trade of a portfolio on the shared basis."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .basis import BasisSpec
from .oracle import closed_form_value
from .regression import FactorizationCache, RegressionSet, fit_bermudan, fit_trades
from .scenarios import ModelConfig, ScenarioCube
from .trades import Trade


def bermudan_payoff(trade: Trade, config: ModelConfig):
    b = config.index(trade.underlying)
    phi = 1.0 if trade.option_type == "call" else -1.0

    def payoff(states):
        return np.maximum(phi * (states[:, b] - trade.strike), 0.0)

    return payoff


def trade_targets(trades: Sequence[Trade], cube: ScenarioCube, config: ModelConfig,
                  date: int, paths: np.ndarray) -> np.ndarray:
    """Closed-form values of ``trades`` on the fitting paths, ``(n_paths, n_trades)``."""
    t = float(cube.dates[date])
    out = np.empty((paths.size, len(trades)))
    for i, tr in enumerate(trades):
        b = config.index(tr.underlying)
        out[:, i] = closed_form_value(tr, cube.values[paths, date, b], config.underlyings[b],
                                      config.rate, t)
    return out


def price_portfolio(trades: Sequence[Trade], cube: ScenarioCube, config: ModelConfig,
                    spec: BasisSpec, cache: FactorizationCache | None = None,
                    n_threads: int = 1) -> RegressionSet:
    """Regress every trade at every stopping date.

    Closed-form trades share one batched back-substitution per date;
    Bermudans go through backward induction on the same factorizations.
    """
    cache = cache or FactorizationCache(cube, spec)
    n_dates = cube.n_dates
    closed = [i for i, t in enumerate(trades) if t.type != "bermudan_option"]
    berm = [i for i, t in enumerate(trades) if t.type == "bermudan_option"]
    coefs = np.zeros((len(trades), n_dates, spec.size))
    rms = np.zeros((len(trades), n_dates))
    for k in range(n_dates):
        cache.get(k)

    def fit_date(k):
        fact = cache.get(k)
        targets = trade_targets([trades[i] for i in closed], cube, config, k, fact.paths)
        return fit_trades(fact, targets)

    if closed:
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                parts = list(pool.map(fit_date, range(n_dates)))
        else:
            parts = [fit_date(k) for k in range(n_dates)]
        for k, (c, r) in enumerate(parts):
            coefs[closed, k, :] = c
            rms[closed, k] = r
    for i in berm:
        tr = trades[i]
        c, r = fit_bermudan(tr.dates, bermudan_payoff(tr, config), cube, spec, config.rate,
                            cache)
        coefs[i] = tr.sign * c
        rms[i] = abs(tr.sign) * r
    return RegressionSet(tuple(t.id for t in trades), coefs, rms, spec, cube.digest,
                         {"types": {t.id: t.type for t in trades}})

"""Brute-force reference calculations used by tests and acceptance runs.

Nothing here imports the basis or regression code: oracles value trades in
closed form, apply indicators path by path, and bump whole pipelines that the
caller hands in as closures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .credit import CreditCurve, XvaKind
from .errors import NonDeterministicPipelineError, UnsupportedTradeError
from .scenarios import ModelConfig, ScenarioCube, ShockSet, UnderlyingModel
from .trades import Trade


@dataclass(frozen=True)
class OracleConfig:
    h: float = 1e-5
    common_random_numbers: bool = True
    frozen_conditioning: bool = True
    rtol: float = 1e-3

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bump size must be positive")


def vasicek_bond(r, tau, model: UnderlyingModel):
    """Zero-coupon bond ``P(t, t + tau)`` given the short rate ``r``."""
    tau = np.asarray(tau, dtype=float)
    k, theta, s = model.mean_reversion, model.mean_level, model.vol
    if k == 0.0:
        return np.exp(-r * tau + s * s * tau ** 3 / 6.0)
    b = -np.expm1(-k * tau) / k
    log_a = (theta - s * s / (2 * k * k)) * (b - tau) - s * s * b * b / (4 * k)
    return np.exp(log_a - b * r)


def black_scholes(x, strike, tau, vol, drift, rate, option_type="call"):
    """Undiscounted-forward Black-Scholes price, ``tau >= 0``."""
    x = np.asarray(x, dtype=float)
    fwd = x * math.exp(drift * tau)
    disc = math.exp(-rate * tau)
    phi = 1.0 if option_type == "call" else -1.0
    sd = vol * math.sqrt(tau)
    if sd == 0.0:
        return disc * np.maximum(phi * (fwd - strike), 0.0)
    with np.errstate(divide="ignore"):
        d1 = (np.log(fwd / strike) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    return disc * phi * (fwd * norm.cdf(phi * d1) - strike * norm.cdf(phi * d2))


def closed_form_value(trade: Trade, x, model: UnderlyingModel, rate: float, t: float):
    """Time-``t`` value of ``trade`` given its underlying level(s) ``x``.

    Supported: forwards and European options on ``gbm`` underlyings, and
    swaplets (settled at fixing) on ``short_rate`` underlyings. Expired
    trades are worth zero; at maturity the trade is worth its payoff.
    """
    x = np.asarray(x, dtype=float)
    tau = trade.maturity - t
    if tau < -1e-12:
        return np.zeros_like(x)
    tau = max(tau, 0.0)
    if model.kind == "gbm" and trade.type == "forward":
        v = x * math.exp((model.drift - rate) * tau) - trade.strike * math.exp(-rate * tau)
    elif model.kind == "gbm" and trade.type == "european_option":
        v = black_scholes(x, trade.strike, tau, model.vol, model.drift, rate, trade.option_type)
    elif model.kind == "short_rate" and trade.type == "swaplet":
        accrual = trade.dates[1] - trade.dates[0]
        v = (vasicek_bond(x, tau, model)
             - (1.0 + accrual * trade.strike) * vasicek_bond(x, tau + accrual, model))
    else:
        raise UnsupportedTradeError(f"no closed form for {trade.type} on {model.kind}")
    return trade.sign * v


def trade_path_values(trades: Sequence[Trade], cube: ScenarioCube, config: ModelConfig,
                      paths=None) -> np.ndarray:
    """Closed-form values ``(n_trades, n_paths, n_dates)``."""
    paths = np.arange(cube.n_base) if paths is None else np.asarray(paths)
    out = np.zeros((len(trades), paths.size, cube.n_dates))
    for i, tr in enumerate(trades):
        b = config.index(tr.underlying)
        model = config.underlyings[b]
        for k, t in enumerate(cube.dates):
            out[i, :, k] = closed_form_value(tr, cube.values[paths, k, b], model, config.rate, t)
    return out


def brute_force_xva(trades: Sequence[Trade], cube: ScenarioCube, config: ModelConfig,
                    credit: CreditCurve, kind: XvaKind) -> float:
    """Pathwise adjustment: closed-form netting values, pathwise indicator,
    rectangle rule over stopping dates, mean over the measure paths."""
    values = trade_path_values(trades, cube, config).sum(axis=0)
    t0 = float(cube.dates[0])
    lgd = credit.lgd_b if kind.party == "B" else credit.lgd_c
    curve = credit.lambda_b if kind.party == "B" else credit.lambda_c
    total = 0.0
    n = values.shape[0]
    for k in range(1, cube.n_dates):
        u = float(cube.dates[k])
        dt = u - float(cube.dates[k - 1])
        q = (credit.rate.integral(t0, u) + credit.lambda_b.integral(t0, u)
             + credit.lambda_c.integral(t0, u))
        acc = 0.0
        for v in values[:, k]:
            if kind.selector == "+" and v >= 0:
                acc += v
            elif kind.selector == "-" and v < 0:
                acc += v
            elif kind.selector == "":
                acc += v
        total += -lgd * dt * float(curve(u)) * math.exp(-float(q)) * acc / n
    return total


def _es_of_losses(losses: Sequence[float], alpha: float) -> tuple[float, list[int]]:
    ranked = sorted(range(len(losses)), key=lambda j: (-losses[j], j))
    m = max(1, int(math.floor((1.0 - alpha) * len(losses) + 1e-9)))
    chosen = ranked[:m]
    return sum(losses[j] for j in chosen) / m, chosen


def full_revaluation_margin(trades: Sequence[Trade], config: ModelConfig, shocks: ShockSet,
                            alpha: float, t: float = 0.0, base=None,
                            measure: str = "ES") -> tuple[float, list[int]]:
    """Initial margin by revaluing every trade under every shock in closed form."""
    base = shocks.base if base is None else np.asarray(base, dtype=float)
    states = shocks.apply(base)
    losses = []
    for s in range(shocks.n):
        pnl = 0.0
        for tr in trades:
            b = config.index(tr.underlying)
            model = config.underlyings[b]
            v0 = float(closed_form_value(tr, base[b], model, config.rate, t))
            v1 = float(closed_form_value(tr, states[s, b], model, config.rate, t))
            pnl += v1 - v0
        losses.append(-pnl)
    es, chosen = _es_of_losses(losses, alpha)
    if measure.upper() == "VAR":
        return losses[chosen[-1]], [chosen[-1]]
    return es, chosen


def lifetime_margin_oracle(trades: Sequence[Trade], cube: ScenarioCube, config: ModelConfig,
                           shocks: ShockSet, alpha: float, date: int) -> float:
    """Average over measure paths of the full-revaluation ES at one date."""
    t = float(cube.dates[date])
    total = 0.0
    for j in range(cube.n_base):
        es, _ = full_revaluation_margin(trades, config, shocks, alpha, t,
                                        base=cube.values[j, date, :])
        total += es
    return total / cube.n_base


def direct_allocation(trade_values: np.ndarray, sets: Sequence[np.ndarray],
                      weights: Sequence[float], n_total: int) -> np.ndarray:
    """Per-trade ``sum_k w_k / n sum_{j in set_k} V_ijk`` by explicit loops."""
    out = np.zeros(trade_values.shape[0])
    for i in range(trade_values.shape[0]):
        acc = 0.0
        for k, idx in enumerate(sets):
            if weights[k] == 0.0:
                continue
            s = 0.0
            for j in idx:
                s += trade_values[i, j, k]
            acc += weights[k] * s / n_total
        out[i] = acc
    return out


def _checked(pipeline: Callable[..., float], *base_args) -> float:
    a = pipeline(*base_args)
    b = pipeline(*base_args)
    if a != b and not (math.isnan(a) and math.isnan(b)):
        raise NonDeterministicPipelineError(f"base evaluations differ: {a!r} vs {b!r}")
    return a


def bump_sensitivity(pipeline: Callable[[float], float], h: float = 1e-5,
                     order: int = 1) -> float:
    """Central finite difference of ``pipeline(bump)`` at zero.

    ``order=1``: ``(f(h) - f(-h)) / 2h``. ``order=2``: ``(f(h) - 2 f(0) +
    f(-h)) / h**2``. The pipeline must be deterministic (common random
    numbers); two base evaluations are compared first.
    """
    if not h > 0:
        raise ValueError("bump size must be positive")
    f0 = _checked(pipeline, 0.0)
    if order == 1:
        return (pipeline(h) - pipeline(-h)) / (2.0 * h)
    if order == 2:
        return (pipeline(h) - 2.0 * f0 + pipeline(-h)) / (h * h)
    raise ValueError("order must be 1 or 2")


def stencil_floor(scale: float, h: float, order: int, ulps: float = 16.0) -> float:
    """Rounding floor of a central stencil.

    Pipeline values carry an absolute rounding error of a few ulp of
    ``scale`` (the summand magnitude); the stencil divides it by ``h`` or
    ``h**2``. Differences below this floor cannot be resolved at that ``h``.
    """
    return float(ulps * np.finfo(float).eps * abs(scale) / h ** order)


def bump_cross(pipeline: Callable[[float, float], float], h: float = 1e-5) -> float:
    """Four-point stencil for a mixed second derivative at ``(0, 0)``."""
    if not h > 0:
        raise ValueError("bump size must be positive")
    _checked(pipeline, 0.0, 0.0)
    return (pipeline(h, h) - pipeline(h, -h) - pipeline(-h, h) + pipeline(-h, -h)) / (4.0 * h * h)

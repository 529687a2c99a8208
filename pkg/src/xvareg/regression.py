"""Trade-level regression on a shared basis.

One SVD of the design matrix per stopping date is reused for every trade;
each trade then costs a single back-substitution against that factorization.
"""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import BasisSpec, eval_basis
from .errors import ConfigurationError, InputError, RankDeficiencyWarning
from .numerics import readonly
from .scenarios import ScenarioCube

SVD_RTOL = 1e-12
# byte budget of one row block of targets in the batched fit
FIT_BLOCK_BYTES = 1 << 18


@dataclass(frozen=True, eq=False)
class DesignFactorization:
    """Thin SVD ``A = U diag(s) Vt`` of the design matrix at one date."""

    date: int
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    paths: np.ndarray
    rtol: float
    reconstruction_error: float

    @property
    def threshold(self) -> float:
        return self.rtol * (self.s[0] if self.s.size else 0.0)

    @property
    def rank(self) -> int:
        return int(np.sum(self.s > self.threshold))

    @property
    def truncated(self) -> bool:
        return self.rank < self.s.size

    @property
    def condition(self) -> float:
        kept = self.s[self.s > self.threshold]
        return float(kept[0] / kept[-1]) if kept.size else math.inf

    def solve(self, targets: np.ndarray) -> np.ndarray:
        """Least-squares coefficients for one target vector or a column block."""
        inv = np.where(self.s > self.threshold, 1.0 / np.where(self.s > 0, self.s, 1.0), 0.0)
        proj = self.u.T @ targets
        if proj.ndim == 1:
            return self.vt.T @ (inv * proj)
        return self.vt.T @ (inv[:, None] * proj)


def factorize_design(cube: ScenarioCube, spec: BasisSpec, date: int, paths=None,
                     rtol: float = SVD_RTOL) -> DesignFactorization:
    """SVD of the basis values over the fitting paths at ``date``.

    Fitting paths default to the whole (augmented) cube.
    """
    paths = np.arange(cube.n_paths) if paths is None else np.asarray(paths)
    if paths.size < spec.size:
        raise ConfigurationError(
            f"{paths.size} fitting paths < {spec.size} basis functions at date {date}")
    a = eval_basis(spec, cube.values[paths, date, :])
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    norm = np.linalg.norm(a)
    err = float(np.linalg.norm(a - (u * s) @ vt) / norm) if norm > 0 else 0.0
    fact = DesignFactorization(date, readonly(u), readonly(s), readonly(vt), readonly(paths),
                               rtol, err)
    if fact.truncated:
        warnings.warn(
            f"date {date}: rank {fact.rank} < {s.size} basis functions, truncated solve",
            RankDeficiencyWarning, stacklevel=2)
    return fact


class FactorizationCache:
    """Computes each ``(date, basis)`` factorization once and counts SVDs."""

    def __init__(self, cube: ScenarioCube, spec: BasisSpec, rtol: float = SVD_RTOL):
        self.cube = cube
        self.spec = spec
        self.rtol = rtol
        self.svd_calls: Counter = Counter()
        self._store: dict[int, DesignFactorization] = {}

    def get(self, date: int) -> DesignFactorization:
        if date not in self._store:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankDeficiencyWarning)
                self._store[date] = factorize_design(self.cube, self.spec, date, rtol=self.rtol)
            self.svd_calls[(date, self.spec)] += 1
        return self._store[date]

    @property
    def rank_deficient_dates(self) -> list[int]:
        return sorted(d for d, f in self._store.items() if f.truncated)


def _check_targets(fact: DesignFactorization, targets: np.ndarray):
    n = fact.u.shape[0]
    if targets.shape[0] != n:
        raise InputError(f"target length {targets.shape[0]} != {n} fitting paths")


def _bad_target(fact: DesignFactorization, block: np.ndarray, lo: int):
    row = lo + int(np.argwhere(~np.isfinite(block))[0][0])
    raise InputError(f"non-finite target at path index {int(fact.paths[row])}")


def fit_trade(fact: DesignFactorization, targets) -> tuple[np.ndarray, float]:
    """Back-substitute one trade: returns ``(coefficients, residual_rms)``."""
    targets = np.asarray(targets, dtype=float)
    coef, rms = fit_trades(fact, targets[:, None])
    return coef[0], float(rms[0])


def fit_trades(fact: DesignFactorization, targets) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`fit_trade`; ``targets`` is ``(n_paths, n_trades)``.

    Two passes over row blocks of the targets (projection, then residual)
    keep every temporary in cache, so the cost is linear in the trade count.
    """
    targets = np.asarray(targets, dtype=float)
    _check_targets(fact, targets)
    n, m = targets.shape
    rows = max(16, FIT_BLOCK_BYTES // (8 * max(m, 1)))
    proj = np.zeros((fact.u.shape[1], m))
    for lo in range(0, n, rows):
        block = targets[lo:lo + rows]
        if not np.isfinite(block).all():
            _bad_target(fact, block, lo)
        proj += fact.u[lo:lo + rows].T @ block
    inv = np.where(fact.s > fact.threshold, 1.0 / np.where(fact.s > 0, fact.s, 1.0), 0.0)
    coef = fact.vt.T @ (inv[:, None] * proj)
    us = fact.u * fact.s
    fitted = fact.vt @ coef
    sq = np.zeros(m)
    for lo in range(0, n, rows):
        resid = targets[lo:lo + rows] - us[lo:lo + rows] @ fitted
        sq += np.einsum("ij,ij->j", resid, resid)
    return coef.T, np.sqrt(sq / n)


def evaluate_regression(coefficients, spec: BasisSpec, states) -> np.ndarray:
    """``sum_l a_l f_l(state)``; vectorised over leading state dimensions."""
    return eval_basis(spec, states) @ np.asarray(coefficients, dtype=float)


@dataclass(frozen=True, eq=False)
class RegressionSet:
    """Per-trade, per-date basis coefficients ``(n_trades, n_dates, L)``."""

    trade_ids: tuple[str, ...]
    coefficients: np.ndarray
    residual_rms: np.ndarray
    spec: BasisSpec
    cube_digest: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.trade_ids)) != len(self.trade_ids):
            raise ConfigurationError("duplicate trade ids")
        if self.coefficients.ndim != 3 or self.coefficients.shape[0] != len(self.trade_ids):
            raise ConfigurationError("coefficients must be (n_trades, n_dates, n_basis)")

    @property
    def n_dates(self) -> int:
        return self.coefficients.shape[1]

    def index(self, trade_id: str) -> int:
        try:
            return self.trade_ids.index(trade_id)
        except ValueError:
            raise KeyError(f"unknown trade id {trade_id!r}") from None

    def trade(self, trade_id: str) -> np.ndarray:
        return self.coefficients[self.index(trade_id)]

    def subset(self, trade_ids: Sequence[str]) -> "RegressionSet":
        idx = [self.index(t) for t in trade_ids]
        return RegressionSet(tuple(trade_ids), self.coefficients[idx], self.residual_rms[idx],
                             self.spec, self.cube_digest, dict(self.metadata))

    def merged(self, other: "RegressionSet") -> "RegressionSet":
        if other.cube_digest != self.cube_digest or other.spec != self.spec:
            raise ConfigurationError("cannot merge regressions from different cubes or bases")
        return RegressionSet(
            self.trade_ids + other.trade_ids,
            np.concatenate([self.coefficients, other.coefficients]),
            np.concatenate([self.residual_rms, other.residual_rms]),
            self.spec, self.cube_digest, {**self.metadata, **other.metadata})

    def portfolio_residual_rms(self) -> np.ndarray:
        """Upper bound on the portfolio residual RMS per date (triangle inequality)."""
        return self.residual_rms.sum(axis=0) if len(self.trade_ids) else np.zeros(self.n_dates)


def portfolio_coefficients(regset: RegressionSet, group: Sequence[str] | None = None) -> np.ndarray:
    """Element-wise sum of member coefficients, ``(n_dates, L)``.

    Sums are correctly rounded (``math.fsum``), so the result is the same
    for every ordering or partition of the member trades.
    """
    if group is None:
        idx = list(range(len(regset.trade_ids)))
    else:
        idx = sorted(regset.index(t) for t in group)
    coef = regset.coefficients[idx]
    if coef.shape[0] == 0:
        return np.zeros(regset.coefficients.shape[1:])
    flat = coef.reshape(coef.shape[0], -1)
    return np.array([math.fsum(col) for col in flat.T.tolist()]).reshape(coef.shape[1:])


def fit_bermudan(exercise_dates: Sequence[float], payoff, cube: ScenarioCube, spec: BasisSpec,
                 rate: float, cache: FactorizationCache | None = None):
    """Backward-induction regression of a Bermudan exercise value.

    ``payoff(states) -> intrinsic values`` is the holder's exercise value at
    the fitting paths. At each exercise date the continuation value is
    regressed on the shared basis; the holder exercises where intrinsic is
    positive and at least the estimated continuation. Every stopping date is
    then fitted to the discounted realised cashflow of a still-alive trade,
    giving coefficients ``(n_dates, L)`` and residual RMS ``(n_dates,)``.
    """
    cache = cache or FactorizationCache(cube, spec)
    dates = cube.dates
    ex_idx = []
    for d in exercise_dates:
        hit = np.flatnonzero(np.isclose(dates, d, rtol=0, atol=1e-10))
        if hit.size == 0:
            raise ConfigurationError(f"exercise date {d} is not a stopping date")
        ex_idx.append(int(hit[0]))
    ex_idx = sorted(set(ex_idx))
    n_dates, size = cube.n_dates, spec.size
    coefs = np.zeros((n_dates, size))
    rms = np.zeros(n_dates)
    last = ex_idx[-1]
    paths = cache.get(last).paths
    cash = np.asarray(payoff(cube.values[paths, last, :]), dtype=float)
    when = np.full(cash.shape, dates[last])
    for k in range(last, -1, -1):
        fact = cache.get(k)
        if k in ex_idx and k != last:
            cont = cash * np.exp(-rate * (when - dates[k]))
            cont_coef = fact.solve(cont)
            cont_est = eval_basis(spec, cube.values[paths, k, :]) @ cont_coef
            intrinsic = np.asarray(payoff(cube.values[paths, k, :]), dtype=float)
            ex = (intrinsic > 0) & (intrinsic >= cont_est)
            cash = np.where(ex, intrinsic, cash)
            when = np.where(ex, dates[k], when)
        target = cash * np.exp(-rate * (when - dates[k]))
        coefs[k], rms[k] = fit_trade(fact, target)
    return coefs, rms

"""Conditioned measures as linear functionals of regression coefficients.

Once the conditioning set is fixed, every figure the engine reports (an
adjustment, a sensitivity, an ES, an MVA) is ``sum_k sum_l a_{l,k} m_{l,k}``
for a moment array ``m`` built from basis values on the selected paths.
Portfolio figures and trade allocations apply the same moments to portfolio
and trade coefficients respectively, so allocations add up by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import column_fsum


def moments_from_rows(rows: np.ndarray, weight: float = 1.0):
    """``(weight * sum_rows, |weight| * sum_rows |.|)`` with exact column sums."""
    rows = np.asarray(rows, dtype=float)
    return weight * column_fsum(rows), abs(weight) * column_fsum(np.abs(rows))


@dataclass(frozen=True, eq=False)
class LinearMeasure:
    """Moments ``(n_dates, L)`` plus their absolute counterparts.

    ``abs_moments`` bound the magnitude of the summands, which is the scale
    used when comparing floating-point totals.
    """

    name: str
    moments: np.ndarray
    abs_moments: np.ndarray

    @classmethod
    def zeros(cls, name: str, n_dates: int, size: int) -> "LinearMeasure":
        return cls(name, np.zeros((n_dates, size)), np.zeros((n_dates, size)))

    def per_date(self, coefficients) -> np.ndarray:
        a = np.asarray(coefficients, dtype=float)
        prod = a * self.moments
        return np.array([math.fsum(row) for row in prod.tolist()])

    def value(self, coefficients) -> float:
        return math.fsum(self.per_date(coefficients).tolist())

    def scale(self, coefficients) -> float:
        """``sum |a| |m|`` over all terms; the summand magnitude of :meth:`value`."""
        a = np.abs(np.asarray(coefficients, dtype=float))
        return math.fsum((a * self.abs_moments).ravel().tolist())

    def allocate(self, trade_coefficients) -> np.ndarray:
        """Per-trade values for coefficients ``(n_trades, n_dates, L)``."""
        return np.array([self.value(a) for a in np.asarray(trade_coefficients, dtype=float)])

    def __add__(self, other: "LinearMeasure") -> "LinearMeasure":
        return LinearMeasure(f"{self.name}+{other.name}", self.moments + other.moments,
                             self.abs_moments + other.abs_moments)

    def scaled(self, factors, name: str | None = None) -> "LinearMeasure":
        """Multiply date ``k`` by ``factors[k]``."""
        f = np.asarray(factors, dtype=float)
        f = f[:, None] if f.ndim == 1 else f
        return LinearMeasure(name or self.name, self.moments * f, self.abs_moments * np.abs(f))

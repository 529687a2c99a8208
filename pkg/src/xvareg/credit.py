"""Piecewise-constant hazard/rate curves and the adjustment discount factor."""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """Left-continuous step function: ``values[i]`` on ``(pillars[i-1], pillars[i]]``.

    Flat extrapolation beyond the last pillar.
    """

    pillars: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.pillars, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.size == 1 and p.size > 1:
            v = np.full(p.size, v[0])
        if p.size != v.size or p.size == 0:
            raise ConfigurationError("curve needs one value per pillar")
        if np.any(np.diff(p) <= 0) or p[0] <= 0:
            raise ConfigurationError("curve pillars must be positive and strictly increasing")
        object.__setattr__(self, "pillars", p)
        object.__setattr__(self, "values", v)

    @classmethod
    def flat(cls, value: float) -> "PiecewiseConstant":
        return cls(np.array([1.0]), np.array([value]))

    def __call__(self, t):
        i = np.minimum(np.searchsorted(self.pillars, t, side="left"), self.pillars.size - 1)
        return self.values[i]

    def integral(self, t0: float, t1) -> np.ndarray:
        """``int_{t0}^{t1}`` of the curve, vectorised over ``t1``."""
        return self._cum(t1) - self._cum(t0)

    def _cum(self, t):
        t = np.asarray(t, dtype=float)
        edges = np.concatenate([[0.0], self.pillars[:-1]])
        widths = np.clip(t[..., None] - edges, 0.0, None)
        caps = np.concatenate([np.diff(np.concatenate([[0.0], self.pillars]))[:-1], [np.inf]])
        return np.sum(np.minimum(widths, caps) * self.values, axis=-1)


class XvaKind(Enum):
    """Table of adjustments: (party whose default matters, exposure selector)."""

    CVA = ("C", "+")
    DVA = ("B", "-")
    FCA = ("B", "+")
    FVA = ("B", "")

    @property
    def party(self) -> str:
        return self.value[0]

    @property
    def selector(self) -> str:
        return self.value[1]

    @classmethod
    def parse(cls, name: str) -> "XvaKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigurationError(f"unknown adjustment {name!r}") from None


@dataclass(frozen=True, eq=False)
class CreditCurve:
    lambda_b: PiecewiseConstant
    lambda_c: PiecewiseConstant
    rate: PiecewiseConstant
    lgd_b: float
    lgd_c: float

    def __post_init__(self):
        for name, lgd in (("lgdB", self.lgd_b), ("lgdC", self.lgd_c)):
            if not 0.0 <= lgd <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if np.any(self.lambda_b.values < 0) or np.any(self.lambda_c.values < 0):
            raise ConfigurationError("hazard rates must be >= 0")

    @classmethod
    def flat(cls, lambda_b=0.0, lambda_c=0.0, rate=0.0, lgd_b=0.6, lgd_c=0.6) -> "CreditCurve":
        f = PiecewiseConstant.flat
        return cls(f(lambda_b), f(lambda_c), f(rate), lgd_b, lgd_c)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CreditCurve":
        try:
            pillars = data.get("pillars", [1.0])
            def curve(key):
                return PiecewiseConstant(np.asarray(pillars, dtype=float),
                                         np.asarray(data.get(key, [0.0]), dtype=float))
            return cls(curve("lambdaB"), curve("lambdaC"), curve("r"),
                       float(data["lgdB"]), float(data["lgdC"]))
        except KeyError as exc:
            raise ConfigurationError(f"credit curve missing {exc}") from exc

    def as_dict(self) -> dict:
        return {
            "pillars": self.rate.pillars.tolist(), "lambdaB": self.lambda_b.values.tolist(),
            "lambdaC": self.lambda_c.values.tolist(), "r": self.rate.values.tolist(),
            "lgdB": self.lgd_b, "lgdC": self.lgd_c,
        }

    def hazard(self, party: str, t):
        return (self.lambda_b if party == "B" else self.lambda_c)(t)

    def lgd(self, party: str) -> float:
        return self.lgd_b if party == "B" else self.lgd_c

    def discount(self, t: float, u) -> np.ndarray:
        """``D_q(t, u)`` with ``q = r + lambda_B + lambda_C``."""
        q = (self.rate.integral(t, u) + self.lambda_b.integral(t, u)
             + self.lambda_c.integral(t, u))
        return np.exp(-q)

    def riskless_discount(self, t: float, u) -> np.ndarray:
        return np.exp(-self.rate.integral(t, u))

    def xva_weights(self, dates: np.ndarray, kind: XvaKind) -> np.ndarray:
        """Per-date factor ``-LGD (t_k - t_{k-1}) lambda(t_k) D_q(t_0, t_k)``.

        Entry 0 (the valuation date) is zero.
        """
        dates = np.asarray(dates, dtype=float)
        w = np.zeros(dates.size)
        if dates.size < 2:
            return w
        u = dates[1:]
        w[1:] = (-self.lgd(kind.party) * np.diff(dates) * self.hazard(kind.party, u)
                 * self.discount(dates[0], u))
        return w


def load_credit_curve(path) -> CreditCurve:
    with open(path) as fh:
        return CreditCurve.from_dict(json.load(fh))

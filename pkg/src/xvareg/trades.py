"""Trade definitions and portfolio file loading."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ConfigurationError

TRADE_TYPES = ("forward", "swaplet", "european_option", "bermudan_option")


@dataclass(frozen=True)
class Trade:
    """One trade of the netting set.

    ``dates`` holds the maturity for forwards and European options, the
    exercise schedule for Bermudans, and ``(fixing, payment)`` for swaplets.
    ``strike`` is the fixed rate for swaplets.
    """

    id: str
    type: str
    underlying: str
    strike: float
    dates: tuple[float, ...]
    notional: float = 1.0
    direction: int = 1
    option_type: str = "call"

    def __post_init__(self):
        if self.type not in TRADE_TYPES:
            raise ConfigurationError(f"trade {self.id}: unknown type {self.type!r}")
        if not self.dates:
            raise ConfigurationError(f"trade {self.id}: no dates")
        if self.direction not in (1, -1):
            raise ConfigurationError(f"trade {self.id}: direction must be +1 or -1")
        if self.option_type not in ("call", "put"):
            raise ConfigurationError(f"trade {self.id}: option_type must be call or put")
        if self.type == "swaplet" and (len(self.dates) != 2 or self.dates[1] <= self.dates[0]):
            raise ConfigurationError(f"trade {self.id}: swaplet needs (fixing, payment) dates")
        if list(self.dates) != sorted(self.dates):
            raise ConfigurationError(f"trade {self.id}: dates must be increasing")

    @property
    def maturity(self) -> float:
        return self.dates[0] if self.type == "swaplet" else self.dates[-1]

    @property
    def sign(self) -> float:
        return self.direction * self.notional

    def as_dict(self) -> dict:
        return {
            "id": self.id, "type": self.type, "underlying": self.underlying,
            "strike": self.strike, "dates": list(self.dates), "notional": self.notional,
            "direction": "long" if self.direction > 0 else "short",
            "option_type": self.option_type,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Trade":
        try:
            direction = data.get("direction", 1)
            if isinstance(direction, str):
                direction = {"long": 1, "short": -1}.get(direction.lower())
                if direction is None:
                    raise ConfigurationError(f"trade {data.get('id')}: bad direction")
            strike = data.get("strike", data.get("rate"))
            if strike is None:
                raise KeyError("strike")
            return cls(
                id=str(data["id"]), type=data["type"], underlying=data["underlying"],
                strike=float(strike), dates=tuple(float(d) for d in data["dates"]),
                notional=float(data.get("notional", 1.0)), direction=int(direction),
                option_type=data.get("option_type", "call"),
            )
        except KeyError as exc:
            raise ConfigurationError(f"trade {data.get('id', '?')}: missing field {exc}") from exc


def load_portfolio(source) -> tuple[list[Trade], bool]:
    """Read a portfolio file.

    Accepts a bare array of trades or ``{"increment": bool, "trades": [...]}``.
    Returns ``(trades, increment_flag)``.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = source
    increment = False
    if isinstance(data, Mapping):
        increment = bool(data.get("increment", False))
        data = data.get("trades", [])
    trades = [Trade.from_dict(t) for t in data]
    ids = [t.id for t in trades]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate trade ids in portfolio")
    return trades, increment

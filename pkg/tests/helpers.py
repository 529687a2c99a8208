"""Test helpers shared across modules."""
from __future__ import annotations

import numpy as np

from xvareg import ModelConfig, ScenarioCube

ACCEPTANCE: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Collect one acceptance line for the terminal summary and echo it."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def states_cube(values, dates=None, names=("x",)) -> ScenarioCube:
    """A cube holding hand-picked states ``(n_paths, n_dates, U)``."""
    values = np.asarray(values, dtype=float)
    n, k, u = values.shape
    dates = np.arange(k, dtype=float) if dates is None else np.asarray(dates, dtype=float)
    underlyings = [{"name": nm, "model": "gbm", "initial": 1.0, "vol": 0.0} for nm in names]
    cfg = ModelConfig.from_dict({"underlyings": underlyings, "correlation": np.eye(u).tolist()})
    return ScenarioCube(values=values, drivers=np.zeros_like(values), dates=dates,
                        names=tuple(names), config=cfg, seed=0, n_base=n,
                        source=np.arange(n), displacement=np.ones((n, u)))


def ulps_apart(a, b, scale=0.0) -> np.ndarray:
    """Elementwise distance in units of the last place at ``max(|a|, |b|, scale)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ref = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.abs(scale))
    return np.where(ref > 0, np.abs(a - b) / np.spacing(np.where(ref > 0, ref, 1.0)), 0.0)

"""Shared fixtures: a two-factor toy market, small cubes and toy portfolios."""
from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from helpers import ACCEPTANCE
from xvareg import (BasisSpec, CreditCurve, ModelConfig, ScenarioCube, Trade,
                    generate_scenarios, generate_shock_scenarios)
from xvareg.pricing import price_portfolio

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "configs" / "toy"

MARKET = {
    "underlyings": [
        {"name": "S", "model": "gbm", "initial": 100.0, "vol": 0.2, "drift": 0.01},
        {"name": "r", "model": "short_rate", "initial": 0.02, "vol": 0.01,
         "mean_reversion": 0.5, "mean_level": 0.03},
    ],
    "correlation": [[1.0, 0.3], [0.3, 1.0]],
    "rate": 0.01,
    "instruments": [
        {"name": "spot", "targets": [["S", "initial"]]},
        {"name": "volS", "targets": [["S", "vol"]]},
        {"name": "muS", "targets": [["S", "drift"]]},
        {"name": "r0", "targets": [["r", "initial"]]},
        {"name": "rbar", "targets": [["r", "mean_level"]]},
    ],
}

TRADES = [
    {"id": "fwd-1", "type": "forward", "underlying": "S", "strike": 98.0, "dates": [2.0]},
    {"id": "opt-1", "type": "european_option", "underlying": "S", "strike": 105.0,
     "dates": [2.0], "direction": "short"},
    {"id": "swl-1", "type": "swaplet", "underlying": "r", "rate": 0.025, "dates": [1.5, 2.0],
     "notional": 1000.0},
]

DATES = np.linspace(0.0, 2.0, 5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model() -> ModelConfig:
    return ModelConfig.from_dict(MARKET)


@pytest.fixture(scope="session")
def cube(model) -> ScenarioCube:
    return generate_scenarios(model, 1500, DATES, seed=11)


@pytest.fixture(scope="session")
def spec() -> BasisSpec:
    return BasisSpec(max_degree=(2, 3), max_total_degree=3, center=(100.0, 0.025),
                     scale=(25.0, 0.01))


@pytest.fixture(scope="session")
def trades() -> list[Trade]:
    return [Trade.from_dict(t) for t in TRADES]


@pytest.fixture(scope="session")
def regset(trades, cube, model, spec):
    return price_portfolio(trades, cube, model, spec)


@pytest.fixture(scope="session")
def credit() -> CreditCurve:
    return CreditCurve.flat(lambda_b=0.01, lambda_c=0.02, rate=0.01)


@pytest.fixture(scope="session")
def shocks(model):
    spec = [{"name": f"s{i}", "displacements": {"S": 1.0 + 0.03 * (i - 2),
                                                  "r": 1.0 - 0.05 * (i - 2)}}
            for i in range(5)]
    return generate_shock_scenarios(np.array([100.0, 0.02]), spec, model.names)


@pytest.fixture()
def toy_config(tmp_path) -> Path:
    """A copy of the toy run config with a smaller path count."""
    for f in TOY.glob("*.json"):
        shutil.copy(f, tmp_path / f.name)
    run = json.loads((tmp_path / "run.json").read_text())
    run["n_paths"] = 600
    run["output"] = str(tmp_path / "out")
    (tmp_path / "run.json").write_text(json.dumps(run, indent=2))
    return tmp_path / "run.json"

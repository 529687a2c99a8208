"""Monte Carlo scenario generation, state-space augmentation, shock sets and
pathwise derivatives of the underlyings.

Two exactly-steppable models are supported per underlying:

``gbm``
    ``x(t) = x0 * exp((drift - vol**2 / 2) t + vol W(t))``
``short_rate``
    one-factor Gaussian (Vasicek) short rate
    ``dr = mean_reversion (mean_level - r) dt + vol dW``

Random numbers come from counter-based Philox streams, one stream per fixed
block of paths, so a cube is bit-identical whatever the thread count.
"""
from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ShockFileError
from .numerics import json_digest, readonly

MODEL_PARAMETERS = {
    "gbm": ("initial", "vol", "drift"),
    "short_rate": ("initial", "vol", "mean_level"),
}

# Paths per random stream. Fixed, so results never depend on threading.
BLOCK_SIZE = 256


@dataclass(frozen=True)
class UnderlyingModel:
    name: str
    kind: str
    initial: float
    vol: float
    drift: float = 0.0
    mean_reversion: float = 0.0
    mean_level: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_PARAMETERS:
            raise ConfigurationError(f"unknown model kind {self.kind!r} for {self.name}")
        if not self.vol >= 0:
            raise ConfigurationError(f"negative volatility for {self.name}")
        if self.kind == "gbm" and not self.initial > 0:
            raise ConfigurationError(f"gbm initial level must be positive for {self.name}")
        if self.mean_reversion < 0:
            raise ConfigurationError(f"negative mean reversion for {self.name}")

    def as_dict(self) -> dict:
        return {
            "name": self.name, "model": self.kind, "initial": self.initial,
            "vol": self.vol, "drift": self.drift,
            "mean_reversion": self.mean_reversion, "mean_level": self.mean_level,
        }


@dataclass(frozen=True)
class Instrument:
    """A calibration instrument and the model parameters it determines."""

    name: str
    targets: tuple[tuple[str, str], ...]


@dataclass(frozen=True, eq=False)
class ModelConfig:
    underlyings: tuple[UnderlyingModel, ...]
    correlation: np.ndarray
    instruments: tuple[Instrument, ...] = ()
    rate: float = 0.0
    seed: int = 0
    n_paths: int | None = None
    dates: tuple[float, ...] | None = None

    def __post_init__(self):
        n = len(self.underlyings)
        if n == 0:
            raise ConfigurationError("model config needs at least one underlying")
        names = [u.name for u in self.underlyings]
        if len(set(names)) != n:
            raise ConfigurationError("duplicate underlying names")
        corr = np.asarray(self.correlation, dtype=float)
        if corr.shape != (n, n):
            raise ConfigurationError(f"correlation matrix must be {n}x{n}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ConfigurationError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ConfigurationError("correlation matrix needs a unit diagonal")
        if np.linalg.eigvalsh(corr).min() < -1e-10:
            raise ConfigurationError("correlation matrix is not positive semi-definite")
        object.__setattr__(self, "correlation", readonly(corr.copy()))
        for inst in self.instruments:
            if not inst.targets:
                raise ConfigurationError(f"instrument {inst.name} maps to no model parameter")
            for und, par in inst.targets:
                if und not in names:
                    raise ConfigurationError(f"instrument {inst.name}: unknown underlying {und}")
                kind = self.underlyings[names.index(und)].kind
                if par not in MODEL_PARAMETERS[kind]:
                    raise ConfigurationError(
                        f"instrument {inst.name}: parameter {par!r} not available for {kind}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(u.name for u in self.underlyings)

    def index(self, underlying: str) -> int:
        try:
            return self.names.index(underlying)
        except ValueError:
            raise ConfigurationError(f"unknown underlying {underlying!r}") from None

    def underlying(self, name: str) -> UnderlyingModel:
        return self.underlyings[self.index(name)]

    def instrument(self, name: str) -> Instrument:
        for inst in self.instruments:
            if inst.name == name:
                return inst
        raise ConfigurationError(f"instrument {name!r} has no parameter mapping")

    def bumped(self, instrument: str, h: float) -> "ModelConfig":
        """Copy with every parameter mapped by ``instrument`` shifted by ``h``."""
        inst = self.instrument(instrument)
        unds = list(self.underlyings)
        for und, par in inst.targets:
            i = self.index(und)
            unds[i] = replace(unds[i], **{par: getattr(unds[i], par) + h})
        return replace(self, underlyings=tuple(unds))

    def as_dict(self) -> dict:
        return {
            "underlyings": [u.as_dict() for u in self.underlyings],
            "correlation": self.correlation.tolist(),
            "instruments": [
                {"name": i.name, "targets": [list(t) for t in i.targets]} for i in self.instruments
            ],
            "rate": self.rate,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        try:
            unds = tuple(
                UnderlyingModel(
                    name=u["name"], kind=u.get("model", "gbm"), initial=float(u["initial"]),
                    vol=float(u.get("vol", 0.0)), drift=float(u.get("drift", 0.0)),
                    mean_reversion=float(u.get("mean_reversion", 0.0)),
                    mean_level=float(u.get("mean_level", 0.0)),
                )
                for u in data["underlyings"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"bad underlying entry: {exc}") from exc
        corr = data.get("correlation", np.eye(len(unds)))
        insts = []
        for item in data.get("instruments", []):
            targets = item.get("targets")
            if targets is None and "underlying" in item:
                targets = [[item["underlying"], item["parameter"]]]
            insts.append(Instrument(item["name"], tuple(tuple(t) for t in (targets or []))))
        dates = data.get("dates")
        return cls(
            underlyings=unds, correlation=np.asarray(corr, dtype=float),
            instruments=tuple(insts), rate=float(data.get("rate", 0.0)),
            seed=int(data.get("seed", 0)),
            n_paths=data.get("n_paths"),
            dates=tuple(float(d) for d in dates) if dates is not None else None,
        )


def load_model_config(path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class ScenarioCube:
    """Underlying values indexed ``(path, date, underlying)``.

    The first ``n_base`` paths are draws under ``measure``; any further paths
    are synthetic augmentation paths. ``source`` and ``displacement`` record
    how every path derives from a simulated one, which is what the pathwise
    derivatives need.
    """

    values: np.ndarray
    drivers: np.ndarray
    dates: np.ndarray
    names: tuple[str, ...]
    config: ModelConfig
    seed: int
    measure: str = "risk-neutral"
    n_base: int = 0
    source: np.ndarray = field(default=None)
    displacement: np.ndarray = field(default=None)
    displacement_mode: str = "multiplicative"
    augmentation: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_dates(self) -> int:
        return self.values.shape[1]

    @property
    def digest(self) -> str:
        """Content hash of seed, dates and model config (plus augmentation)."""
        return json_digest({
            "seed": self.seed, "dates": self.dates.tolist(), "model": self.config.as_dict(),
            "n_base": self.n_base, "augmentation": list(self.augmentation),
        })

    def state(self, date: int, paths=None) -> np.ndarray:
        """States at one date, shape ``(n, n_underlyings)``."""
        if paths is None:
            return self.values[:, date, :]
        return self.values[paths, date, :]

    def base_states(self, date: int) -> np.ndarray:
        return self.values[: self.n_base, date, :]


def _check_dates(dates) -> np.ndarray:
    dates = np.asarray(dates, dtype=float)
    if dates.ndim != 1 or dates.size == 0:
        raise ConfigurationError("date grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(dates)) or dates[0] < 0:
        raise ConfigurationError("dates must be finite year fractions >= 0")
    if np.any(np.diff(dates) <= 0):
        raise ConfigurationError("dates must be strictly increasing")
    return dates


def _correlation_factor(corr: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(corr)
    if w.min() < -1e-10:
        raise ConfigurationError("correlation matrix is not positive semi-definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _ou_step_std(kappa: float, dt: np.ndarray) -> np.ndarray:
    if kappa == 0.0:
        return np.sqrt(dt)
    return np.sqrt(-np.expm1(-2.0 * kappa * dt) / (2.0 * kappa))


def _simulate_block(config: ModelConfig, dates: np.ndarray, seed: int, block: int, n: int,
                    factor: np.ndarray):
    n_dates, n_u = dates.size, len(config.underlyings)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))
    z = rng.standard_normal((n, n_dates, n_u)) @ factor.T
    dt = np.diff(dates, prepend=0.0)
    values = np.empty((n, n_dates, n_u))
    drivers = np.empty((n, n_dates, n_u))
    for b, und in enumerate(config.underlyings):
        if und.kind == "gbm":
            w = np.cumsum(np.sqrt(dt) * z[:, :, b], axis=1)
            drivers[:, :, b] = w
            values[:, :, b] = und.initial * np.exp(
                (und.drift - 0.5 * und.vol ** 2) * dates + und.vol * w)
        else:
            kappa = und.mean_reversion
            decay = np.exp(-kappa * dt)
            std = _ou_step_std(kappa, dt)
            g = np.empty((n, n_dates))
            prev = np.zeros(n)
            for k in range(n_dates):
                prev = prev * decay[k] + std[k] * z[:, k, b]
                g[:, k] = prev
            drivers[:, :, b] = g
            e = np.exp(-kappa * dates)
            values[:, :, b] = und.initial * e + und.mean_level * (1.0 - e) + und.vol * g
    return values, drivers


def generate_scenarios(config: ModelConfig, n_paths: int, dates, seed: int,
                       n_threads: int = 1) -> ScenarioCube:
    """Simulate ``n_paths`` paths on the stopping-date grid.

    Stepping is exact in distribution for both models. ``n_threads`` only
    changes scheduling; the returned cube is bit-identical for any value.
    """
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    dates = _check_dates(dates)
    factor = _correlation_factor(np.asarray(config.correlation))
    n_u = len(config.underlyings)
    blocks = [(b, min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE))
              for b in range(math.ceil(n_paths / BLOCK_SIZE))]

    def work(item):
        return _simulate_block(config, dates, seed, item[0], item[1], factor)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    values = np.concatenate([p[0] for p in parts], axis=0)
    drivers = np.concatenate([p[1] for p in parts], axis=0)
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("simulation produced non-finite values")
    return ScenarioCube(
        values=readonly(values), drivers=readonly(drivers), dates=readonly(dates),
        names=config.names, config=config, seed=seed, n_base=n_paths,
        source=readonly(np.arange(n_paths)),
        displacement=readonly(np.ones((n_paths, n_u))),
    )


@dataclass(frozen=True)
class Augmentation:
    """Direct augmentation: replicate a subsample under a displacement grid.

    ``displacements`` holds one entry per synthetic copy; each entry is a
    scalar (applied to every underlying) or a mapping underlying -> factor.
    """

    displacements: tuple
    subsample: int
    mode: str = "multiplicative"

    @classmethod
    def from_dict(cls, data: Mapping) -> "Augmentation":
        if not data or "displacements" not in data:
            raise ConfigurationError("augmentation spec needs a 'displacements' entry")
        disp = tuple(d if not isinstance(d, Mapping) else tuple(sorted(d.items()))
                     for d in data["displacements"])
        return cls(disp, int(data.get("subsample", 0)), data.get("mode", "multiplicative"))


def augment_state_space(cube: ScenarioCube, augmentation: Augmentation | Mapping | None) -> ScenarioCube:
    """Widen the state space with displaced copies of a path subsample.

    Original paths are kept as a prefix; for ``m`` displacements applied to a
    subsample of ``s`` paths the output has ``n_paths + m * s`` paths.
    """
    if augmentation is None:
        raise ConfigurationError("empty displacement spec")
    if isinstance(augmentation, Mapping):
        augmentation = Augmentation.from_dict(augmentation)
    if augmentation.mode not in ("multiplicative", "additive"):
        raise ConfigurationError(f"unknown displacement mode {augmentation.mode!r}")
    if not augmentation.displacements:
        return cube
    if cube.n_paths > cube.n_base and cube.displacement_mode != augmentation.mode:
        raise ConfigurationError("cannot mix displacement modes on one cube")
    n_u = len(cube.names)
    sub = augmentation.subsample or cube.n_base
    if not 1 <= sub <= cube.n_base:
        raise ConfigurationError(f"subsample {sub} outside 1..{cube.n_base}")
    neutral = 1.0 if augmentation.mode == "multiplicative" else 0.0
    rows = []
    for d in augmentation.displacements:
        if isinstance(d, tuple):
            vec = np.full(n_u, neutral)
            for name, f in d:
                if name not in cube.names:
                    raise ConfigurationError(f"displacement for unknown underlying {name!r}")
                vec[cube.names.index(name)] = float(f)
        else:
            vec = np.full(n_u, float(d))
        rows.append(vec)
    disp = np.array(rows)
    idx = np.arange(sub)
    src_values = cube.values[idx]
    new_vals, new_drv, new_src, new_disp = [], [], [], []
    for vec in disp:
        if augmentation.mode == "multiplicative":
            new_vals.append(src_values * vec)
        else:
            new_vals.append(src_values + vec)
        new_drv.append(cube.drivers[idx])
        new_src.append(cube.source[idx])
        new_disp.append(np.broadcast_to(vec, (sub, n_u)))
    values = np.concatenate([cube.values, *new_vals])
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("augmentation produced non-finite values")
    spec = {"displacements": [list(r) for r in disp.tolist()], "subsample": sub,
            "mode": augmentation.mode}
    return replace(
        cube,
        values=readonly(values),
        drivers=readonly(np.concatenate([cube.drivers, *new_drv])),
        source=readonly(np.concatenate([cube.source, *new_src])),
        displacement=readonly(np.concatenate([cube.displacement, *new_disp])),
        displacement_mode=augmentation.mode,
        augmentation=cube.augmentation + (json.dumps(spec, sort_keys=True),),
    )


def _param_first(und: UnderlyingModel, par: str, t, x, drv):
    if und.kind == "gbm":
        if par == "initial":
            return x / und.initial
        if par == "vol":
            return x * (drv - und.vol * t)
        return x * t
    e = np.exp(-und.mean_reversion * t) * np.ones_like(x)
    if par == "initial":
        return e
    if par == "mean_level":
        return 1.0 - e
    return drv * np.ones_like(x)


def _param_second(und: UnderlyingModel, p: str, q: str, t, x, drv):
    if und.kind != "gbm":
        return np.zeros_like(x)
    p, q = sorted((p, q))
    y = drv - und.vol * t
    x0 = und.initial
    table = {
        ("initial", "initial"): lambda: np.zeros_like(x),
        ("drift", "initial"): lambda: x * t / x0,
        ("initial", "vol"): lambda: x * y / x0,
        ("vol", "vol"): lambda: x * (y * y - t),
        ("drift", "vol"): lambda: x * t * y,
        ("drift", "drift"): lambda: x * t * t,
    }
    return table[(p, q)]()


@dataclass(frozen=True, eq=False)
class UnderlyingJacobian:
    """Pathwise ``dx/ds`` and ``d2x/ds dr`` with the cube's index shape."""

    first: Mapping[str, np.ndarray]
    second: Mapping[tuple[str, str], np.ndarray]
    cube_digest: str

    def d1(self, s: str) -> np.ndarray:
        try:
            return self.first[s]
        except KeyError:
            raise KeyError(f"instrument {s!r} not in jacobian") from None

    def d2(self, s: str, r: str) -> np.ndarray:
        key = tuple(sorted((s, r)))
        try:
            return self.second[key]
        except KeyError:
            raise KeyError(f"instrument pair {key} not in jacobian") from None

    @property
    def instruments(self) -> tuple[str, ...]:
        return tuple(self.first)


def underlying_jacobian(cube: ScenarioCube, config: ModelConfig, instruments: Sequence[str],
                        second_order: bool = True) -> UnderlyingJacobian:
    """Analytic pathwise derivatives of every underlying w.r.t. instruments.

    Displaced augmentation paths inherit the derivatives of their source
    path, scaled by the factor for multiplicative displacements.
    """
    t = cube.dates[None, :]
    src = cube.source
    mult = cube.displacement_mode == "multiplicative"
    scale = cube.displacement if mult else np.ones_like(cube.displacement)
    base_x = cube.values[src]
    base_drv = cube.drivers[src]

    first, second = {}, {}
    insts = [config.instrument(s) for s in instruments]
    for inst in insts:
        out = np.zeros(cube.values.shape)
        for und_name, par in inst.targets:
            b = config.index(und_name)
            und = config.underlyings[b]
            out[:, :, b] += _param_first(und, par, t, base_x[:, :, b], base_drv[:, :, b])
        out *= scale[:, None, :]
        first[inst.name] = readonly(out)
    if second_order:
        for i, si in enumerate(insts):
            for sj in insts[i:]:
                key = tuple(sorted((si.name, sj.name)))
                a, c = (si, sj) if si.name == key[0] else (sj, si)
                out = np.zeros(cube.values.shape)
                for und_a, pa in a.targets:
                    for und_c, pc in c.targets:
                        if und_a != und_c:
                            continue
                        b = config.index(und_a)
                        und = config.underlyings[b]
                        out[:, :, b] += _param_second(und, pa, pc, t, base_x[:, :, b],
                                                      base_drv[:, :, b])
                out *= scale[:, None, :]
                second[key] = readonly(out)
    return UnderlyingJacobian(first, second, cube.digest)


@dataclass(frozen=True, eq=False)
class ShockSet:
    """Shock scenarios applied to a base state.

    ``factors`` has one row per scenario; multiplicative rows scale the base
    state, additive rows shift it.
    """

    names: tuple[str, ...]
    factors: np.ndarray
    weights: np.ndarray
    base: np.ndarray
    underlyings: tuple[str, ...]
    mode: str = "multiplicative"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ConfigurationError("shock weights must be nonnegative and sum to 1")

    @property
    def n(self) -> int:
        return self.factors.shape[0]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def apply(self, states: np.ndarray) -> np.ndarray:
        """Shocked states. ``states`` is ``(..., U)``; result is ``(..., n, U)``."""
        states = np.asarray(states, dtype=float)[..., None, :]
        if self.mode == "multiplicative":
            return states * self.factors
        return states + self.factors

    def apply_derivative(self, dstate: np.ndarray) -> np.ndarray:
        """Derivatives of shocked states given derivatives of the base state."""
        dstate = np.asarray(dstate, dtype=float)[..., None, :]
        if self.mode == "multiplicative":
            return dstate * self.factors
        return np.broadcast_to(dstate, dstate.shape[:-2] + self.factors.shape).copy()

    @property
    def states(self) -> np.ndarray:
        return self.apply(self.base)

    def rebased(self, base) -> "ShockSet":
        return replace(self, base=np.asarray(base, dtype=float))


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def _parse_shock_text(text: str) -> list[tuple[dict, int]]:
    dec = json.JSONDecoder()
    try:
        dec.decode(text)
    except json.JSONDecodeError as exc:
        raise ShockFileError(exc.msg, exc.lineno) from exc
    ws = re.compile(r"\s*")
    pos = ws.match(text, 0).end()
    if pos >= len(text) or text[pos] != "[":
        raise ShockFileError("shock file must hold a JSON array", _line_of(text, pos))
    pos = ws.match(text, pos + 1).end()
    items = []
    if text[pos] == "]":
        return items
    while True:
        obj, end = dec.raw_decode(text, pos)
        items.append((obj, _line_of(text, pos)))
        pos = ws.match(text, end).end()
        if text[pos] == ",":
            pos = ws.match(text, pos + 1).end()
            continue
        break
    return items


def generate_shock_scenarios(base, spec, underlyings: Sequence[str]) -> ShockSet:
    """Build a :class:`ShockSet` from a shock file (path or JSON text).

    File format: array of ``{name, displacements: {underlying: factor},
    weight?, mode?}``. Underlyings absent from ``displacements`` are left
    unshocked. All scenarios in a file must share one mode.
    """
    if isinstance(spec, Path) or (isinstance(spec, str) and not spec.lstrip().startswith("[")
                                   and Path(spec).is_file()):
        text = Path(spec).read_text()
    elif isinstance(spec, str):
        text = spec
    else:
        text = json.dumps(spec, indent=1)
    items = _parse_shock_text(text)
    underlyings = tuple(underlyings)
    if len(items) < 2:
        raise ShockFileError("need at least 2 shock scenarios", _line_of(text, 0))
    names, rows, weights, modes = [], [], [], set()
    for obj, line in items:
        if not isinstance(obj, dict):
            raise ShockFileError("scenario must be an object", line)
        if "name" not in obj or "displacements" not in obj:
            raise ShockFileError("scenario needs 'name' and 'displacements'", line)
        mode = obj.get("mode", "multiplicative")
        if mode not in ("multiplicative", "additive"):
            raise ShockFileError(f"unknown mode {mode!r}", line)
        modes.add(mode)
        disp = obj["displacements"]
        if not isinstance(disp, dict):
            raise ShockFileError("'displacements' must map underlying -> factor", line)
        row = np.full(len(underlyings), 1.0 if mode == "multiplicative" else 0.0)
        for und, f in disp.items():
            if und not in underlyings:
                raise ShockFileError(f"unknown underlying {und!r}", line)
            if not isinstance(f, (int, float)) or not math.isfinite(f):
                raise ShockFileError(f"non-numeric displacement for {und!r}", line)
            row[underlyings.index(und)] = float(f)
        w = obj.get("weight")
        if w is not None and (not isinstance(w, (int, float)) or w < 0):
            raise ShockFileError("weight must be a nonnegative number", line)
        names.append(str(obj["name"]))
        rows.append(row)
        weights.append(w)
    if len(modes) > 1:
        raise ShockFileError("mixed shock modes in one file", items[0][1])
    given = [w is not None for w in weights]
    if any(given) and not all(given):
        raise ShockFileError("either all scenarios carry a weight or none", items[given.index(False)][1])
    if all(given):
        w = np.array(weights, dtype=float)
        if w.sum() <= 0:
            raise ShockFileError("weights sum to zero", items[0][1])
        w = w / w.sum()
    else:
        w = np.full(len(rows), 1.0 / len(rows))
    base = np.asarray(base, dtype=float)
    if base.shape != (len(underlyings),):
        raise ConfigurationError("base state does not match underlyings")
    return ShockSet(tuple(names), readonly(np.array(rows)), readonly(w), base, underlyings,
                    modes.pop())

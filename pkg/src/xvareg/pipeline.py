"""Run configuration, the end-to-end pipeline, report writing and saved state."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .allocation import (AllocationReport, MarginState, PortfolioState, allocate_es,
                         allocate_sensitivity, allocate_value, build_state,
                         incremental_update, regroup, sign_measures)
from .basis import BasisSpec
from .conditioning import ConditioningSet, sign_condition
from .credit import CreditCurve, XvaKind
from .errors import ConfigurationError, CubeMismatchError, RankCollapseError
from .margin import compute_mva, lifetime_margins, margin_measure, mva_weights
from .pricing import price_portfolio
from .regression import FactorizationCache, RegressionSet, portfolio_coefficients
from .scenarios import (Augmentation, ModelConfig, ScenarioCube, ShockSet, augment_state_space,
                        generate_scenarios, generate_shock_scenarios, underlying_jacobian)
from .sensitivities import xva_delta, xva_gamma
from .trades import Trade, load_portfolio
from .xva import complement, compute_xva, portfolio_path_values

SCHEMA_VERSION = "1.0"
MEASURES = ("CVA", "DVA", "FCA", "FVA", "MVA")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; file references are resolved paths."""

    market: Path
    portfolio: Path
    credit: Path
    shocks: Path | None = None
    grouping: Path | None = None
    output: Path = Path("xva_out")
    measures: tuple[str, ...] = ("CVA", "DVA", "FCA", "FVA")
    instruments: tuple[str, ...] = ()
    order: int = 1
    sensitivity_measures: tuple[str, ...] = ("CVA",)
    seed: int | None = None
    n_paths: int | None = None
    dates: tuple[float, ...] | None = None
    basis: Mapping | None = None
    augmentation: Mapping | None = None
    alpha: float = 0.975
    margin_measure: str = "ES"
    spread: float = 0.0
    survival: bool = True
    margin_date: int = 0

    @classmethod
    def from_dict(cls, data: Mapping, root: Path | str = ".") -> "RunConfig":
        """Validate every field and report all problems at once."""
        root = Path(root)
        errors = []

        def path(key, required=True):
            v = data.get(key)
            if v is None:
                if required:
                    errors.append(f"{key}: required")
                return None
            p = Path(v)
            p = p if p.is_absolute() else root / p
            if not p.is_file():
                errors.append(f"{key}: file not found: {p}")
            return p

        market, portfolio, credit = path("market"), path("portfolio"), path("credit")
        shocks, grouping = path("shocks", False), path("grouping", False)
        measures = tuple(m.upper() for m in data.get("measures", ("CVA", "DVA", "FCA", "FVA")))
        for m in measures:
            if m not in MEASURES:
                errors.append(f"measures: unknown measure {m!r}")
        if "MVA" in measures and shocks is None:
            errors.append("shocks: required when MVA is requested")
        sens = data.get("sensitivities", {}) or {}
        order = int(sens.get("order", 1))
        if order not in (1, 2):
            errors.append("sensitivities.order: must be 1 or 2")
        smeas = tuple(m.upper() for m in sens.get("measures", ("CVA",)))
        for m in smeas:
            if m not in MEASURES[:4]:
                errors.append(f"sensitivities.measures: unsupported measure {m!r}")
        margin = data.get("margin", {}) or {}
        alpha = float(margin.get("alpha", 0.975))
        if not 0.0 < alpha < 1.0:
            errors.append("margin.alpha: must lie in (0, 1)")
        mkind = str(margin.get("measure", "ES")).upper()
        if mkind not in ("ES", "VAR"):
            errors.append("margin.measure: must be ES or VaR")
        n_paths = data.get("n_paths")
        if n_paths is not None and int(n_paths) < 1:
            errors.append("n_paths: must be >= 1")
        out_dir = Path(data.get("output", "xva_out"))
        if errors:
            raise ConfigurationError("; ".join(errors))
        return cls(
            market=market, portfolio=portfolio, credit=credit, shocks=shocks, grouping=grouping,
            output=out_dir if out_dir.is_absolute() else root / out_dir, measures=measures,
            instruments=tuple(sens.get("instruments", ())), order=order,
            sensitivity_measures=smeas,
            seed=None if data.get("seed") is None else int(data["seed"]),
            n_paths=None if n_paths is None else int(n_paths),
            dates=None if data.get("dates") is None else tuple(float(d) for d in data["dates"]),
            basis=data.get("basis"), augmentation=data.get("augmentation"),
            alpha=alpha, margin_measure=mkind, spread=float(margin.get("spread", 0.0)),
            survival=bool(margin.get("survival", True)),
            margin_date=int(margin.get("date", 0)),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


@dataclass(frozen=True)
class Inputs:
    model: ModelConfig
    trades: tuple[Trade, ...]
    credit: CreditCurve
    shocks_spec: object
    grouping: Mapping[str, str] | None
    seed: int
    n_paths: int
    dates: tuple[float, ...]


def load_inputs(cfg: RunConfig, seed: int | None = None) -> Inputs:
    model = ModelConfig.from_dict(_read_json(cfg.market))
    trades, _ = load_portfolio(cfg.portfolio)
    credit = CreditCurve.from_dict(_read_json(cfg.credit))
    shocks = None if cfg.shocks is None else Path(cfg.shocks)
    grouping = None if cfg.grouping is None else dict(_read_json(cfg.grouping))
    seed = seed if seed is not None else (cfg.seed if cfg.seed is not None else model.seed)
    n_paths = cfg.n_paths or model.n_paths
    dates = cfg.dates or model.dates
    errors = []
    if not n_paths:
        errors.append("n_paths: not given in run or market config")
    if not dates:
        errors.append("dates: not given in run or market config")
    for s in cfg.instruments:
        try:
            model.instrument(s)
        except ConfigurationError as exc:
            errors.append(f"sensitivities.instruments: {exc}")
    for t in trades:
        if t.underlying not in model.names:
            errors.append(f"portfolio: trade {t.id} references unknown underlying "
                          f"{t.underlying!r}")
    if errors:
        raise ConfigurationError("; ".join(errors))
    return Inputs(model, tuple(trades), credit, shocks, grouping, int(seed), int(n_paths),
                  tuple(dates))


def default_basis(cube: ScenarioCube, data: Mapping | None = None) -> BasisSpec:
    """Quadratic basis normalised by the measure paths at the final date,
    unless ``data`` fixes the basis explicitly."""
    n_u = len(cube.names)
    data = dict(data or {})
    x = cube.values[: cube.n_base, -1, :]
    if data.get("center") is None:
        data["center"] = [float(v) for v in x.mean(axis=0)]
    if data.get("scale") is None:
        sd = x.std(axis=0)
        data["scale"] = [float(s) if s > 0 else 1.0 for s in sd]
    data.setdefault("max_degree", [2] * n_u)
    data.setdefault("max_total_degree", 2)
    return BasisSpec.from_dict(data, n_u)


def build_cube(model: ModelConfig, n_paths: int, dates, seed: int, augmentation=None,
               n_threads: int = 1) -> ScenarioCube:
    cube = generate_scenarios(model, n_paths, dates, seed, n_threads)
    if augmentation:
        cube = augment_state_space(cube, Augmentation.from_dict(augmentation))
    return cube


def check_rank(cache: FactorizationCache, n_dates: int) -> dict:
    """Factorization diagnostics; a date with no usable singular value fails."""
    out = {}
    for k in range(n_dates):
        f = cache.get(k)
        if f.rank == 0 or not np.all(np.isfinite(f.s)):
            raise RankCollapseError(f"date {k}: regression design has rank {f.rank}")
        out[k] = {"rank": f.rank, "basis_size": int(f.s.size), "condition": f.condition}
    return out


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    inputs: Inputs
    cube: ScenarioCube
    spec: BasisSpec
    regset: RegressionSet
    xva: dict
    mva: object
    sensitivities: list
    allocations: list
    groups: list
    positive: ConditioningSet
    diagnostics: dict
    state: PortfolioState
    shocks: ShockSet | None = None
    margin_allocation: AllocationReport | None = None


def run_pipeline(cfg: RunConfig, seed: int | None = None, n_threads: int = 1) -> RunResult:
    """Scenarios, regressions, conditioning, measures, sensitivities, allocation."""
    inputs = load_inputs(cfg, seed)
    cube = build_cube(inputs.model, inputs.n_paths, inputs.dates, inputs.seed,
                      cfg.augmentation, n_threads)
    spec = default_basis(cube, cfg.basis)
    cache = FactorizationCache(cube, spec)
    rank_info = check_rank(cache, cube.n_dates)
    regset = price_portfolio(inputs.trades, cube, inputs.model, spec, cache, n_threads)
    if not np.all(np.isfinite(regset.coefficients)):
        raise RankCollapseError("non-finite regression coefficients")
    a = portfolio_coefficients(regset)
    values = portfolio_path_values(a, spec, cube)
    positive = sign_condition(values, "+")
    credit = inputs.credit

    def set_for(kind):
        return complement(positive) if kind.selector == "-" else positive

    xva, allocations, clamps = {}, [], {}
    for name in cfg.measures:
        if name == "MVA":
            continue
        kind = XvaKind.parse(name)
        res = compute_xva(a, spec, cube, credit, kind, cond=set_for(kind))
        xva[name] = res
        clamps[name] = res.diagnostics["clamp_counts"]
        allocations.append(allocate_value(regset, set_for(kind), cube, credit, kind))

    shocks = mva = margin_alloc = None
    if cfg.shocks is not None:
        base = np.array([u.initial for u in inputs.model.underlyings])
        shocks = generate_shock_scenarios(base, cfg.shocks, inputs.model.names)
    if "MVA" in cfg.measures:
        life = lifetime_margins(a, spec, cube, shocks, cfg.alpha, cfg.margin_measure)
        w = mva_weights(cube.dates, cfg.spread, credit, cfg.survival)
        mva = compute_mva(life.margins, cube.dates, cfg.spread, credit, cfg.survival)
        lm = life.measure.scaled(w, name="MVA")
        values_mva = lm.allocate(regset.coefficients) if regset.trade_ids else np.zeros(0)
        allocations.append(AllocationReport("MVA", regset.trade_ids, values_mva, mva.total,
                                            regset.trade_ids, values_mva, lm.scale(a)))
    if shocks is not None:
        margin_alloc = allocate_es(regset, shocks, cfg.alpha, cfg.margin_date,
                                   cfg.margin_measure)

    sens = []
    if cfg.instruments:
        jac = underlying_jacobian(cube, inputs.model, cfg.instruments, cfg.order == 2)
        for name in cfg.sensitivity_measures:
            kind = XvaKind.parse(name)
            cond = set_for(kind)
            for s in cfg.instruments:
                rep = xva_delta(a, spec, cube, jac, credit, kind, s, cond=cond)
                sens.append(rep)
                allocations.append(allocate_sensitivity(regset, cond, cube, jac, credit,
                                                        kind, s))
            if cfg.order == 2:
                insts = sorted(cfg.instruments)
                for i, s in enumerate(insts):
                    for r in insts[i:]:
                        rep = xva_gamma(a, spec, cube, jac, credit, kind, (s, r), cond=cond)
                        sens.append(rep)
                        allocations.append(allocate_sensitivity(regset, cond, cube, jac,
                                                                credit, kind, (s, r)))
    groups = []
    if inputs.grouping is not None:
        groups = [regroup(rep, inputs.grouping) for rep in allocations]

    diagnostics = {
        "schema_version": SCHEMA_VERSION,
        "cube_digest": cube.digest,
        "basis": spec.as_dict(),
        "residual_rms": {tid: regset.residual_rms[i].tolist()
                         for i, tid in enumerate(regset.trade_ids)},
        "clamp_counts": clamps,
        "factorizations": {str(k): v for k, v in rank_info.items()},
        "rank_deficient_dates": cache.rank_deficient_dates,
        "work": {
            "svd_calls": int(sum(cache.svd_calls.values())),
            "n_dates": int(cube.n_dates),
            "n_trades": len(regset.trade_ids),
            "fitting_paths": int(cube.n_paths),
            "measure_paths": int(cube.n_base),
        },
        "allocation_residuals": {rep.measure: rep.residual for rep in allocations},
        # summand magnitude of each total, the unit for ulp comparisons of the CSV rows
        "allocation_scales": {rep.measure: rep.scale for rep in allocations},
    }
    if margin_alloc is not None:
        diagnostics["work"]["margin_allocation"] = margin_alloc.work
        diagnostics["allocation_residuals"][margin_alloc.measure] = margin_alloc.residual
        diagnostics["allocation_scales"][margin_alloc.measure] = margin_alloc.scale
    warnings = []
    if shocks is not None and cfg.margin_date in cache.rank_deficient_dates:
        warnings.append(f"margin date {cfg.margin_date} has a rank-deficient design; "
                        "augment the state space so shocked states are covered")
    diagnostics["warnings"] = warnings
    state = build_state(regset, cube, credit, shocks=shocks if "MVA" in cfg.measures else None,
                        alpha=cfg.alpha, margin_measure_kind=cfg.margin_measure,
                        spread=cfg.spread, survival=cfg.survival)
    return RunResult(cfg, inputs, cube, spec, regset, xva, mva, sens, allocations, groups,
                     positive, diagnostics, state, shocks, margin_alloc)


# Report writing ----------------------------------------------------------------

def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def report_files(result: RunResult) -> dict[str, str]:
    """Report name -> text. Identical inputs give identical bytes."""
    cube = result.cube
    dates = cube.dates.tolist()
    measures = {}
    xva_rows = []
    for name, res in result.xva.items():
        measures[name] = {"total": res.total, "per_date": res.integrands.tolist()}
        if res.direct_total is not None:
            measures[name]["direct_total"] = res.direct_total
        xva_rows += [(name, float(d), float(v)) for d, v in zip(dates, res.integrands)]
        xva_rows.append((name, "total", float(res.total)))
    if result.mva is not None:
        measures["MVA"] = {"total": result.mva.total, "per_date": result.mva.integrands.tolist()}
        xva_rows += [("MVA", float(d), float(v)) for d, v in zip(dates, result.mva.integrands)]
        xva_rows.append(("MVA", "total", float(result.mva.total)))
    report = {
        "schema_version": SCHEMA_VERSION, "seed": result.inputs.seed,
        "cube_digest": cube.digest, "dates": dates, "measures": measures,
        "n_paths": int(cube.n_base), "trades": list(result.regset.trade_ids),
    }
    if result.margin_allocation is not None:
        report["initial_margin"] = {
            "measure": result.margin_allocation.measure,
            "date": result.config.margin_date, "value": result.margin_allocation.total,
        }
    sens_rows = [row for rep in result.sensitivities for row in rep.rows(dates)]
    alloc = list(result.allocations)
    if result.margin_allocation is not None:
        alloc.append(result.margin_allocation)
    alloc_rows = [row for rep in alloc for row in rep.rows()]
    pos = result.positive
    sets = {
        "schema_version": SCHEMA_VERSION,
        "positive": pos.to_json(dates),
        "negative": complement(pos).to_json(dates),
    }
    if result.margin_allocation is not None:
        sets["initial_margin"] = result.margin_allocation.conditioning.to_json()
    files = {
        "xva_report.json": _json_text(report),
        "xva_report.csv": _csv_text(("measure", "date", "value"), xva_rows),
        "sensitivities.csv": _csv_text(
            ("adjustment", "instrument", "instrument2", "date", "contribution"), sens_rows),
        "allocation.csv": _csv_text(("measure", "trade", "value"), alloc_rows),
        "conditioning_sets.json": _json_text(sets),
        "diagnostics.json": _json_text(result.diagnostics),
    }
    if result.groups:
        files["allocation_groups.csv"] = _csv_text(
            ("measure", "group", "value"), [row for rep in result.groups for row in rep.rows()])
    return files


def write_reports(result: RunResult, out_dir: Path | str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in report_files(result).items():
        p = out_dir / name
        p.write_text(text)
        written.append(p)
    return written


# Saved state -------------------------------------------------------------------

def save_state(result: RunResult, path) -> Path:
    """Write the incremental state as one ``.npz`` archive.

    The archive holds a ``meta`` JSON document (inputs needed to rebuild the
    cube, cube digest, basis, credit, trades) and the raw arrays of
    :class:`PortfolioState`.
    """
    st = result.state
    cfg = result.config
    meta = {
        "schema_version": SCHEMA_VERSION,
        "cube_digest": st.cube_digest,
        "market": result.inputs.model.as_dict(),
        "seed": result.inputs.seed, "n_paths": result.inputs.n_paths,
        "dates": list(result.inputs.dates), "augmentation": cfg.augmentation,
        "basis": result.spec.as_dict(), "credit": result.inputs.credit.as_dict(),
        "trades": [t.as_dict() for t in result.inputs.trades],
        "trade_ids": list(st.regset.trade_ids),
        "kinds": sorted(st.date_weights),
        "has_factors": sorted(st.factors),
        "margin": None if st.margin is None else {
            "alpha": st.margin.alpha, "kind": st.margin.kind,
            "shock_names": list(st.margin.shocks.names),
            "underlyings": list(st.margin.shocks.underlyings),
            "mode": st.margin.shocks.mode,
        },
    }
    arrays = {
        "coefficients": st.regset.coefficients, "residual_rms": st.regset.residual_rms,
        "path_values": st.path_values, "basis_rows": st.basis_rows,
        "positive_mask": np.stack([st.positive.mask(k) for k in range(st.positive.n_dates)],
                                  axis=1),
    }
    for k, w in st.date_weights.items():
        arrays[f"weights_{k}"] = w
    for k, f in st.factors.items():
        arrays[f"factors_{k}"] = f
    if st.margin is not None:
        m = st.margin
        arrays.update({
            "margin_losses": m.losses, "margin_tails": m.tail_sets,
            "margin_rows": m.path_rows, "margin_weights": m.weights,
            "shock_factors": m.shocks.factors, "shock_weights": m.shocks.weights,
            "shock_base": m.shocks.base,
        })
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


@dataclass(eq=False)
class LoadedState:
    meta: dict
    state: PortfolioState
    cube: ScenarioCube
    model: ModelConfig
    trades: tuple[Trade, ...]


def load_state(path, n_threads: int = 1) -> LoadedState:
    """Read a saved state and rebuild its scenario cube.

    The regenerated cube must reproduce the stored digest; otherwise the
    state cannot be combined with new trades.
    """
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arr = {k: z[k] for k in z.files if k != "meta"}
    model = ModelConfig.from_dict(meta["market"])
    cube = build_cube(model, meta["n_paths"], meta["dates"], meta["seed"],
                      meta["augmentation"], n_threads)
    if cube.digest != meta["cube_digest"]:
        raise CubeMismatchError("saved state does not match its regenerated scenario cube")
    spec = BasisSpec.from_dict(meta["basis"], len(model.underlyings))
    regset = RegressionSet(tuple(meta["trade_ids"]), arr["coefficients"], arr["residual_rms"],
                           spec, meta["cube_digest"])
    mask = arr["positive_mask"]
    values = arr["path_values"]
    positive = ConditioningSet(
        "sign+", tuple(np.flatnonzero(mask[:, k]) for k in range(mask.shape[1])),
        mask.shape[0], None)
    weights = {k: arr[f"weights_{k}"] for k in meta["kinds"]}
    factors = {k: arr[f"factors_{k}"] for k in meta["has_factors"]}
    measures = sign_measures(arr["basis_rows"], positive, weights, factors, spec.size)
    margin = None
    if meta["margin"] is not None:
        mm = meta["margin"]
        shocks = ShockSet(tuple(mm["shock_names"]), arr["shock_factors"], arr["shock_weights"],
                          arr["shock_base"], tuple(mm["underlyings"]), mm["mode"])
        margin = MarginState(shocks, mm["alpha"], mm["kind"], arr["margin_losses"],
                             arr["margin_tails"], arr["margin_rows"], arr["margin_weights"])
        measures["MVA"] = margin_measure(margin.path_rows, margin.kind).scaled(
            margin.weights, name="MVA")
    state = PortfolioState(meta["cube_digest"], np.asarray(meta["dates"], dtype=float), regset,
                           values, arr["basis_rows"], weights, factors, positive, measures,
                           margin)
    trades = tuple(Trade.from_dict(t) for t in meta["trades"])
    return LoadedState(meta, state, cube, model, trades)


def whatif(loaded: LoadedState, delta_trades: Sequence[Trade], measures: Sequence[str],
           n_threads: int = 1):
    """Incremental what-if: price only the new trades and update the state.

    Returns the report document and the :class:`IncrementalResult`.
    """
    state = loaded.state
    existing = set(state.regset.trade_ids)
    clash = [t.id for t in delta_trades if t.id in existing]
    if clash:
        raise ConfigurationError(f"delta trade ids already in the portfolio: {clash}")
    measures = [m.upper() for m in measures]
    for m in measures:
        if m not in state.measures:
            raise ConfigurationError(f"measure {m!r} not available in the saved state")
    spec = state.regset.spec
    delta = price_portfolio(list(delta_trades), loaded.cube, loaded.model, spec,
                            n_threads=n_threads)
    res = incremental_update(state, delta, loaded.cube)
    flips = {k: [{"path": j + 1, "date": float(loaded.cube.dates[d])} for j, d in v]
             for k, v in res.flips.items()}
    return {
        "schema_version": SCHEMA_VERSION,
        "cube_digest": state.cube_digest,
        "delta_trades": [t.id for t in delta_trades],
        "before": {m: res.before[m] for m in measures},
        "after": {m: res.after[m] for m in measures},
        "allocation_changes": {m: res.allocation_changes.get(m, {}) for m in measures},
        "flip_audit": flips,
        "work": res.work,
    }, res


__all__ = [
    "RunConfig", "Inputs", "RunResult", "load_inputs", "run_pipeline", "report_files",
    "write_reports", "save_state", "load_state", "whatif", "default_basis", "build_cube",
    "SCHEMA_VERSION",
]

"""End-to-end scenario runs with on-disk stage caching.

Stages run in order: PV profiles, demand allocation per network, reference
tariff optimisation, calibration, optimisation under every other tariff,
power flow and the report. Each stage result is pickled under
``<out>/cache`` keyed by a hash of everything it depends on (input file
contents, settings and upstream keys), so a rerun with unchanged inputs
recomputes nothing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import pickle
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .demand import (
    AllocationError,
    allocate_stage1,
    estimate_annual_energy,
    read_buildings_csv,
    read_library_csv,
    read_transformer_csv,
    reconcile_stage2,
)
from .kpi import TariffRun, emit_report
from .optimizer import BatteryParams, Building, CostModel, SolverOptions, optimize_building
from .powerflow import (
    HostingLimits,
    Network,
    NetworkError,
    OverloadCurve,
    hosting_capacity,
    load_network,
    overload_events,
    run_timeseries,
)
from .pv import PULLY_LATITUDE, PULLY_LONGITUDE, PVParams, pv_profile, read_roofs_csv, read_weather_csv
from .tariffs import (
    REFERENCE_NAMES,
    TARIFF_NAMES,
    Calibration,
    TariffError,
    TariffSpec,
    average_calibrations,
    bill,
    build_schedule,
    dso_revenue,
    get_tariff,
    solve_calibration,
    tariff_from_config,
)
from .timegrid import TimeGrid

log = logging.getLogger(__name__)

REQUIRED_DATA = ("weather", "buildings", "roofs", "reference_profiles", "reference_meta")
TOP_KEYS = {"seed", "horizon", "data", "networks", "tariffs", "references", "average_calibration",
            "costs", "battery", "solver", "powerflow", "location", "year"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")


@dataclass(frozen=True)
class NetworkEntry:
    file: str
    transformer_load: str | None = None


@dataclass(frozen=True)
class PowerFlowOptions:
    use_virtual_rating: bool = False
    curve: tuple[tuple[float, float], ...] = OverloadCurve().points
    hosting_capacity: bool = False
    hosting_tol: float = 1e-3
    hosting_cap: float = 10.0


@dataclass
class ScenarioConfig:
    path: str
    seed: int
    horizon: dict
    data: dict[str, str]
    networks: list[NetworkEntry]
    tariffs: list[TariffSpec]
    references: tuple[str, str]
    average_calibration: bool = True
    costs: CostModel = field(default_factory=CostModel)
    battery: BatteryParams = field(default_factory=BatteryParams)
    solver: SolverOptions = field(default_factory=SolverOptions)
    powerflow: PowerFlowOptions = field(default_factory=PowerFlowOptions)
    latitude: float = PULLY_LATITUDE
    longitude: float = PULLY_LONGITUDE
    year: int = 2025

    def grid(self) -> TimeGrid:
        if "days" in self.horizon:
            return TimeGrid.first_days(int(self.horizon["days"]), year=self.year)
        if "representative_weeks" in self.horizon:
            return TimeGrid.representative_weeks(tuple(self.horizon["representative_weeks"]), year=self.year)
        return TimeGrid.year_grid(self.year)

    @property
    def tariff_names(self) -> list[str]:
        return [t.name for t in self.tariffs]


# ---------------------------------------------------------------------------
# validation


def _dataclass_from(cls, values, where: str, errors: list[str], convert=None):
    if values is None:
        return cls()
    if not isinstance(values, Mapping):
        errors.append(f"{where}: expected a mapping")
        return None
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        errors.append(f"{where}: unknown keys {', '.join(unknown)}")
        return None
    try:
        kwargs = {k: (convert(k, v) if convert else v) for k, v in values.items()}
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def apply_overrides(raw: dict, tariffs: Sequence[str] | None = None, days: int | None = None,
                    seed: int | None = None) -> dict:
    raw = dict(raw)
    if tariffs:
        raw["tariffs"] = list(tariffs)
    if days:
        raw["horizon"] = {"days": int(days)}
    if seed is not None:
        raw["seed"] = int(seed)
    return raw


def parse_config(raw: Any, path: str) -> tuple[ScenarioConfig | None, list[str]]:
    """Check a parsed config mapping; returns every problem found."""
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        return None, [f"{path}: top level must be a mapping"]
    base = os.path.dirname(os.path.abspath(path))
    resolve = lambda p: p if os.path.isabs(p) else os.path.join(base, p)  # noqa: E731

    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        errors.append(f"unknown top-level keys: {', '.join(unknown)}")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append("seed: must be a non-negative integer")
        seed = 0

    year = raw.get("year", 2025)
    horizon = raw.get("horizon") or {}
    if not isinstance(horizon, Mapping) or not set(horizon) <= {"days", "representative_weeks", "full_year"}:
        errors.append("horizon: expected one of days, representative_weeks, full_year")
        horizon = {}
    elif "days" in horizon and (not isinstance(horizon["days"], int) or not 1 <= horizon["days"] <= 365):
        errors.append("horizon.days: must be an integer in [1, 365]")
    elif "representative_weeks" in horizon:
        months = horizon["representative_weeks"]
        if not isinstance(months, list) or not months or any(not isinstance(m, int) or not 1 <= m <= 12 for m in months):
            errors.append("horizon.representative_weeks: must list month numbers 1..12")

    data_raw = raw.get("data")
    data: dict[str, str] = {}
    if not isinstance(data_raw, Mapping):
        errors.append("data: missing section (needs " + ", ".join(REQUIRED_DATA) + ")")
    else:
        for key in REQUIRED_DATA:
            if not data_raw.get(key):
                errors.append(f"data.{key}: missing path")
                continue
            p = resolve(str(data_raw[key]))
            if not os.path.isfile(p):
                errors.append(f"data.{key}: file not found: {p}")
            data[key] = p
        extra = sorted(set(data_raw) - set(REQUIRED_DATA))
        if extra:
            errors.append(f"data: unknown keys {', '.join(extra)}")

    networks: list[NetworkEntry] = []
    nets_raw = raw.get("networks")
    if not isinstance(nets_raw, list) or not nets_raw:
        errors.append("networks: need a non-empty list of network files")
    else:
        for i, entry in enumerate(nets_raw):
            if isinstance(entry, str):
                entry = {"file": entry}
            if not isinstance(entry, Mapping) or not entry.get("file"):
                errors.append(f"networks[{i}]: needs a file")
                continue
            f = resolve(str(entry["file"]))
            if not os.path.isfile(f):
                errors.append(f"networks[{i}].file: file not found: {f}")
            t = entry.get("transformer_load")
            if t:
                t = resolve(str(t))
                if not os.path.isfile(t):
                    errors.append(f"networks[{i}].transformer_load: file not found: {t}")
            networks.append(NetworkEntry(f, t or None))

    refs = tuple(raw.get("references") or REFERENCE_NAMES)
    specs: list[TariffSpec] = []
    ref_specs = []
    for r in refs:
        try:
            ref_specs.append(get_tariff(r))
        except TariffError as exc:
            errors.append(f"references: {exc}")
    if len(refs) != 2:
        errors.append("references: exactly two reference tariffs are expected")
    tariffs_raw = raw.get("tariffs", "all")
    if tariffs_raw == "all" or tariffs_raw is None:
        tariffs_raw = list(TARIFF_NAMES)
    if not isinstance(tariffs_raw, list):
        errors.append("tariffs: expected 'all' or a list")
        tariffs_raw = []
    for i, t in enumerate(tariffs_raw):
        try:
            specs.append(get_tariff(t) if isinstance(t, str) else tariff_from_config(t))
        except (TariffError, TypeError, KeyError, ValueError) as exc:
            errors.append(f"tariffs[{i}]: {exc}")
    ref_names = [s.name for s in ref_specs]
    chosen = ref_specs + [s for s in specs if s.name not in ref_names]
    names = [s.name for s in chosen]
    if len(set(names)) != len(names):
        errors.append("tariffs: duplicate tariff names")

    costs = _dataclass_from(CostModel, raw.get("costs"), "costs", errors)
    battery = _dataclass_from(BatteryParams, raw.get("battery"), "battery", errors)
    solver = _dataclass_from(SolverOptions, raw.get("solver"), "solver", errors)
    pf = _dataclass_from(
        PowerFlowOptions, raw.get("powerflow"), "powerflow", errors,
        convert=lambda k, v: tuple(tuple(map(float, p)) for p in v) if k == "curve" else v,
    )
    if pf is not None:
        try:
            OverloadCurve(pf.curve)
        except (ValueError, TypeError) as exc:
            errors.append(f"powerflow.curve: {exc}")
    loc = raw.get("location") or {}
    lat = float(loc.get("latitude", PULLY_LATITUDE)) if isinstance(loc, Mapping) else PULLY_LATITUDE
    lon = float(loc.get("longitude", PULLY_LONGITUDE)) if isinstance(loc, Mapping) else PULLY_LONGITUDE
    avg = raw.get("average_calibration", True)
    if not isinstance(avg, bool):
        errors.append("average_calibration: must be true or false")

    if errors:
        return None, errors
    cfg = ScenarioConfig(path=os.path.abspath(path), seed=seed, horizon=dict(horizon), data=data,
                         networks=networks, tariffs=chosen, references=tuple(ref_names),
                         average_calibration=avg, costs=costs, battery=battery, solver=solver,
                         powerflow=pf, latitude=lat, longitude=lon, year=int(year))
    return cfg, []


def validate_config(path, **overrides) -> tuple[ScenarioConfig | None, list[str]]:
    """Fully resolved config, or the complete list of problems."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        return None, [f"{path}: {exc.strerror}"]
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        return None, [f"{where}: {getattr(exc, 'problem', None) or exc}"]
    if isinstance(raw, Mapping):
        raw = apply_overrides(raw, **overrides)
    return parse_config(raw, str(path))


# ---------------------------------------------------------------------------
# caching


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def stage_key(*parts) -> str:
    payload = json.dumps([__version__, *parts], sort_keys=True, default=repr)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


class StageCache:
    def __init__(self, root, compute_missing: bool = True):
        self.root = root
        self.compute_missing = compute_missing
        self.log: list[tuple[str, str, float]] = []  # (stage, status, seconds)
        os.makedirs(root, exist_ok=True)

    def _path(self, stage: str, key: str) -> str:
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in stage)
        return os.path.join(self.root, f"{safe}-{key}.pkl")

    def run(self, stage: str, key: str, fn: Callable[[], Any]) -> Any:
        path = self._path(stage, key)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                value = pickle.load(fh)
            self.log.append((stage, "cached", 0.0))
            return value
        if not self.compute_missing:
            self.log.append((stage, "missing", 0.0))
            raise KeyError(stage)
        t0 = time.perf_counter()
        try:
            value = fn()
        except Exception as exc:
            self.log.append((stage, "failed", time.perf_counter() - t0))
            raise StageError(stage, exc) from exc
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(value, fh, protocol=4)
        os.replace(tmp, path)
        self.log.append((stage, "computed", time.perf_counter() - t0))
        return value

    @property
    def computed(self) -> list[str]:
        return [s for s, status, _ in self.log if status == "computed"]


# ---------------------------------------------------------------------------
# stages


def _year_positions(grid: TimeGrid) -> np.ndarray:
    origin = np.datetime64(f"{grid.year}-01-01T00:00", "m")
    step = np.timedelta64(round(grid.step_hours * 60), "m")
    return ((grid.start - origin) // step).astype(int)


def stage_pv(cfg: ScenarioConfig, grid: TimeGrid) -> dict[str, tuple[np.ndarray, float]]:
    weather = read_weather_csv(cfg.data["weather"], grid, cfg.latitude, cfg.longitude)
    roofs = read_roofs_csv(cfg.data["roofs"])
    out = {}
    with warnings.catch_warnings():
        # a four-week yield extrapolated to a year is not a plausibility test
        if grid.year_fraction < 1:
            warnings.simplefilter("ignore")
        for bid in sorted(roofs):
            out[bid] = pv_profile(weather, roofs[bid], PVParams())
    return out


def stage_demand(cfg: ScenarioConfig, entry: NetworkEntry, net: Network, grid: TimeGrid) -> dict[str, np.ndarray]:
    metas = {m.building_id: m for m in read_buildings_csv(cfg.data["buildings"])}
    missing = sorted(b for b in net.injections if b not in metas)
    if missing:
        raise AllocationError(f"network {net.name}: buildings without metadata: {', '.join(missing)}")
    chosen = [metas[b] for b in sorted(net.injections)]
    energies = [estimate_annual_energy(m) for m in chosen]
    year = TimeGrid.year_grid(grid.year, grid.step_hours)
    library = read_library_csv(cfg.data["reference_profiles"], cfg.data["reference_meta"], year)
    _, loads = allocate_stage1(chosen, energies, library, year)
    loads = loads[:, _year_positions(grid)]
    if entry.transformer_load:
        trafo = read_transformer_csv(entry.transformer_load, grid)
        loads = reconcile_stage2(loads, trafo, weights=[1.0 / e for e in energies])
    return {m.building_id: loads[i] for i, m in enumerate(chosen)}


def _optimize_one(args):
    building, schedule, costs, battery, solver = args
    return optimize_building(building, schedule, costs, battery, solver)


def stage_optimize(cfg: ScenarioConfig, spec: TariffSpec, grid: TimeGrid, loads, pv, jobs: int = 1) -> dict:
    agg = np.sum(list(loads.values()), axis=0)
    schedule = build_schedule(spec, grid, agg)
    buildings = []
    for bid in sorted(loads):
        if bid in pv:
            profile, cap = pv[bid]
        else:
            profile, cap = np.zeros(len(grid)), 0.0
        buildings.append(Building(bid, loads[bid], profile, cap))
    work = [(b, schedule, cfg.costs, cfg.battery, cfg.solver) for b in buildings]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            designs = list(pool.map(_optimize_one, work))
    else:
        designs = [_optimize_one(w) for w in work]
    return {d.building_id: d for d in designs}


def stage_powerflow(cfg: ScenarioConfig, net: Network, grid: TimeGrid, designs) -> dict:
    result = run_timeseries(net, designs)
    rating = net.transformer.effective_rating(cfg.powerflow.use_virtual_rating)
    curve = OverloadCurve(cfg.powerflow.curve)
    overload = overload_events(result.transformer_flow, rating, curve, grid.step_hours, grid.contiguous())
    hosting = None
    if cfg.powerflow.hosting_capacity:
        limits = HostingLimits(curve, use_virtual_rating=cfg.powerflow.use_virtual_rating)
        hosting = hosting_capacity(net, designs, limits, grid, cfg.powerflow.hosting_tol,
                                   cfg.powerflow.hosting_cap).label
    return {"result": result, "overload": overload, "hosting": hosting}


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class ScenarioReport:
    exit_code: int
    stages: list[tuple[str, str, float]]
    problems: list[str]
    runs: list[TariffRun]
    calibrations: dict[str, dict[str, Calibration]] = field(default_factory=dict)
    report_files: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def computed(self) -> list[str]:
        return [s for s, status, _ in self.stages if status == "computed"]


def run_scenario(
    cfg: ScenarioConfig,
    out_dir,
    jobs: int = 1,
    stop_after: str | None = None,
    compute_missing: bool = True,
) -> ScenarioReport:
    """Run every stage, reusing cached results; see the module docstring.

    ``stop_after`` ends the run after ``"calibrate"`` or ``"powerflow"``.
    With ``compute_missing`` False nothing is computed and the report covers
    whatever the cache already holds.
    """
    grid = cfg.grid()
    cache = StageCache(os.path.join(out_dir, "cache"), compute_missing)
    problems: list[str] = []
    fp = grid.fingerprint()

    def cached(stage, key, fn):
        try:
            return cache.run(stage, key, fn)
        except KeyError:
            return None

    pv_key = stage_key("pv", file_digest(cfg.data["weather"]), file_digest(cfg.data["roofs"]), fp,
                       cfg.latitude, cfg.longitude, repr(PVParams()))
    pv = cached("pv", pv_key, lambda: stage_pv(cfg, grid))

    nets: dict[str, tuple[Network, NetworkEntry, str]] = {}
    for entry in cfg.networks:
        try:
            net = load_network(entry.file)
        except NetworkError as exc:
            raise StageError("network", exc) from exc
        if net.name in nets:
            raise StageError("network", ValueError(f"duplicate network name {net.name!r}"))
        nets[net.name] = (net, entry, file_digest(entry.file))

    demand, demand_keys = {}, {}
    lib_digest = (file_digest(cfg.data["reference_profiles"]), file_digest(cfg.data["reference_meta"]))
    for name, (net, entry, digest) in nets.items():
        key = stage_key("demand", digest, file_digest(cfg.data["buildings"]), lib_digest,
                        file_digest(entry.transformer_load) if entry.transformer_load else None, fp)
        demand_keys[name] = key
        demand[name] = cached(f"demand_{name}", key, lambda n=net, e=entry: stage_demand(cfg, e, n, grid))

    settings = (repr(cfg.costs), repr(cfg.battery), repr(cfg.solver))
    designs: dict[tuple[str, str], dict] = {}
    opt_keys: dict[tuple[str, str], str] = {}
    specs_used: dict[tuple[str, str], TariffSpec] = {}

    def optimize(name: str, spec: TariffSpec):
        key = stage_key("optimize", demand_keys[name], pv_key, repr(spec), settings)
        opt_keys[(name, spec.name)] = key
        specs_used[(name, spec.name)] = spec
        if demand[name] is None or pv is None:
            cache.log.append((f"optimize_{name}_{spec.name}", "missing", 0.0))
            designs[(name, spec.name)] = None
            return
        designs[(name, spec.name)] = cached(
            f"optimize_{name}_{spec.name}", key,
            lambda: stage_optimize(cfg, spec, grid, demand[name], pv, jobs),
        )

    ref_specs = [s for s in cfg.tariffs if s.name in cfg.references]
    for name in nets:
        for spec in ref_specs:
            optimize(name, spec)

    # calibration against the reference dispatches, never the tariff's own
    ref_revenue: dict[str, float] = {}
    for name in nets:
        ds = [designs[(name, s.name)] for s in ref_specs]
        if any(d is None for d in ds):
            continue
        agg = np.sum(list(demand[name].values()), axis=0)
        revs = [dso_revenue(s, grid, list(d.values()), agg) for s, d in zip(ref_specs, ds)]
        ref_revenue[name] = float(np.mean(revs))

    calibrations: dict[str, dict[str, Calibration]] = {}
    calibrated: dict[tuple[str, str], TariffSpec] = {}
    for spec in cfg.tariffs:
        if spec.name in cfg.references:
            continue
        per_net: dict[str, Calibration] = {}
        for name in nets:
            if name not in ref_revenue:
                continue
            ref_keys = [opt_keys[(name, s.name)] for s in ref_specs]
            key = stage_key("calibrate", ref_keys, repr(spec))
            agg = np.sum(list(demand[name].values()), axis=0)
            dispatches = [d for s in ref_specs for d in designs[(name, s.name)].values()]
            target = ref_revenue[name] * len(ref_specs)
            res = cached(f"calibrate_{name}_{spec.name}", key,
                         lambda s=spec, ds=dispatches, t=target, a=agg: solve_calibration(s, grid, ds, t, a))
            if res is not None:
                per_net[name] = res
        calibrations[spec.name] = per_net
        for name, res in per_net.items():
            if cfg.average_calibration and len(per_net) > 1:
                calibrated[(name, spec.name)] = average_calibrations(spec, list(per_net.values()))
            else:
                calibrated[(name, spec.name)] = res.spec
    if stop_after == "calibrate":
        return ScenarioReport(0, cache.log, problems, [], calibrations)

    for spec in cfg.tariffs:
        if spec.name in cfg.references:
            continue
        for name in nets:
            if (name, spec.name) in calibrated:
                optimize(name, calibrated[(name, spec.name)])
            else:
                designs[(name, spec.name)] = None

    for (name, tariff), ds in sorted(designs.items()):
        if ds is None:
            continue
        for d in ds.values():
            for p in d.check_invariants(cfg.battery, grid.step_hours):
                problems.append(f"{name}/{tariff}/{d.building_id}: {p}")

    flows: dict[tuple[str, str], dict] = {}
    pf_settings = repr(cfg.powerflow)
    for name, (net, _, digest) in nets.items():
        for spec in cfg.tariffs:
            ds = designs.get((name, spec.name))
            if ds is None:
                continue
            key = stage_key("powerflow", digest, opt_keys[(name, spec.name)], pf_settings)
            res = cached(f"powerflow_{name}_{spec.name}", key, lambda n=net, d=ds: stage_powerflow(cfg, n, grid, d))
            if res is None:
                continue
            flows[(name, spec.name)] = res
            try:
                res["result"].check_conservation()
            except Exception as exc:  # recorded, not fatal
                problems.append(f"{name}/{spec.name}: {exc}")

    runs = []
    for name, (net, _, _) in nets.items():
        for spec in cfg.tariffs:
            ds = designs.get((name, spec.name))
            if ds is None:
                continue
            schedule = build_schedule(specs_used[(name, spec.name)], grid,
                                      np.sum(list(demand[name].values()), axis=0))
            bills = {bid: bill(schedule, d) for bid, d in ds.items()}
            pf = flows.get((name, spec.name))
            cal = calibrations.get(spec.name, {}).get(name)
            runs.append(TariffRun(
                name, spec.name, grid, ds, bills, ref_revenue.get(name),
                pf["result"] if pf else None, pf["overload"] if pf else None,
                sorted(set(net.injections.values())), pf["hosting"] if pf else None,
                cal.factor if cal is not None else None,
            ))

    missing = [f"{s}" for s, status, _ in cache.log if status == "missing"]
    if stop_after == "powerflow" or not runs:
        code = 0 if not problems and not missing else 1
        return ScenarioReport(code, cache.log, problems, runs, calibrations, missing=missing)

    report_key = stage_key("report", sorted(opt_keys.values()), pf_settings,
                           sorted(k for k in flows), cfg.references, cfg.tariff_names)

    def write_report():
        files = emit_report(runs, out_dir, cfg.references, list(nets), cfg.tariff_names)
        _write_calibration_table(os.path.join(out_dir, "tables", "calibration.csv"), calibrations)
        return files.written + ["tables/calibration.csv"]

    if not compute_missing:
        written = write_report()
    else:
        manifest = cache._path("report", report_key)
        if os.path.exists(manifest):
            with open(manifest, "rb") as fh:
                listed = pickle.load(fh)
            if not all(os.path.exists(os.path.join(out_dir, f)) for f in listed):
                os.remove(manifest)  # report files were deleted; write them again
        written = cache.run("report", report_key, write_report)
    code = 0 if not problems and not missing else 1
    return ScenarioReport(code, cache.log, problems, runs, calibrations, written, missing)


def _write_calibration_table(path, calibrations: Mapping[str, Mapping[str, Calibration]]) -> None:
    from .kpi import _write

    rows = []
    for tariff in calibrations:
        for name, res in sorted(calibrations[tariff].items()):
            spec = res.spec
            cap = spec.capacity
            rows.append((
                name, tariff,
                res.factor if res.factor is not None else float("nan"),
                res.uniform_rate if res.uniform_rate is not None else float("nan"),
                spec.dynamic_median if spec.dynamic_median is not None else float("nan"),
                ";".join(f"{k}={v:.6g}" for k, v in sorted(cap.rate_by_season.items())) if cap else "",
            ))
    _write(path, ("network", "tariff", "factor", "uniform_rate", "dynamic_median", "capacity_rates"), rows)

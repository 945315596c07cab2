"""Cost-optimal PV and battery sizing and dispatch for one building.

The program minimises annualised investment and maintenance plus the grid
bill over the simulated horizon. Everything is linear except the PV fixed
cost, gated by one binary; that binary is resolved exactly by solving both
fixed-binary LPs and keeping the cheaper one. Capacity charges enter through
epigraph variables ``peak_k >= import_t`` for every step ``t`` in period ``k``.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .tariffs import TariffSchedule, bill

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
_CLEAN_TOL = 1e-7

# per-step variable blocks, in layout order
STEP_BLOCKS = ("imp", "exp", "pv_load", "pv_batt", "batt_load", "curt", "soc")


class InfeasibleDesign(RuntimeError):
    pass


@dataclass(frozen=True)
class CostModel:
    pv_fixed_cost: float = 10049.0
    pv_specific_cost: float = 1050.0  # currency/kW
    battery_fixed_cost: float = 0.0
    battery_specific_cost: float = 229.0  # currency/kWh
    discount_rate: float = 0.03
    system_lifetime: float = 25.0
    battery_lifetime: float = 15.0
    pv_maintenance: float = 20.0  # currency/kW/yr

    def __post_init__(self) -> None:
        costs = (self.pv_fixed_cost, self.pv_specific_cost, self.battery_fixed_cost,
                 self.battery_specific_cost, self.pv_maintenance)
        if any(c < 0 for c in costs):
            raise ValueError("costs must be >= 0")
        if not 0 < self.discount_rate < 1:
            raise ValueError("discount rate must lie in (0, 1)")
        if self.system_lifetime <= 0 or self.battery_lifetime <= 0:
            raise ValueError("lifetimes must be > 0")

    @property
    def pv_annuity(self) -> float:
        return annuity_factor(self.discount_rate, self.system_lifetime)

    @property
    def battery_annuity(self) -> float:
        return annuity_factor(self.discount_rate, self.battery_lifetime)

    def annual_capex(self, pv_kw: float, batt_kwh: float) -> float:
        """Annualised investment plus PV maintenance for the given sizes."""
        cost = 0.0
        if pv_kw > 0:
            cost += self.pv_annuity * (self.pv_fixed_cost + self.pv_specific_cost * pv_kw)
            cost += self.pv_maintenance * pv_kw
        if batt_kwh > 0:
            cost += self.battery_annuity * (self.battery_fixed_cost + self.battery_specific_cost * batt_kwh)
        return cost


@dataclass(frozen=True)
class BatteryParams:
    charge_efficiency: float = 0.96
    discharge_efficiency: float = 0.96
    soc_min: float = 0.0
    soc_max: float = 1.0
    max_c_rate: float = 1.0  # 1/h

    def __post_init__(self) -> None:
        if not (0 < self.charge_efficiency <= 1 and 0 < self.discharge_efficiency <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if self.max_c_rate <= 0:
            raise ValueError("max_c_rate must be > 0")


@dataclass(frozen=True, eq=False)
class Building:
    building_id: str
    load: np.ndarray  # kW
    pv_per_kw: np.ndarray  # kW/kWp
    max_pv_capacity: float  # kWp

    def __post_init__(self) -> None:
        if np.shape(self.load) != np.shape(self.pv_per_kw):
            raise ValueError(f"{self.building_id}: load and PV profile lengths differ")
        if np.any(self.load < 0) or np.any(self.pv_per_kw < 0):
            raise ValueError(f"{self.building_id}: load and PV profile must be >= 0")
        if self.max_pv_capacity < 0:
            raise ValueError(f"{self.building_id}: max PV capacity must be >= 0")

    def scaled(self, factor: float) -> "Building":
        return replace(self, load=self.load * factor, max_pv_capacity=self.max_pv_capacity * factor)


@dataclass(eq=False)
class SystemDesign:
    building_id: str
    pv_capacity: float
    battery_capacity: float
    grid_import: np.ndarray
    grid_export: np.ndarray
    pv_to_load: np.ndarray
    pv_to_batt: np.ndarray
    batt_to_load: np.ndarray
    soc: np.ndarray  # kWh at the start of each step
    load: np.ndarray
    pv_gen: np.ndarray
    curtailment: np.ndarray
    tco: float  # capex share plus bill over the horizon
    capex: float = 0.0
    objective: float = float("nan")
    optimal: bool = True

    def check_invariants(self, battery: BatteryParams, step_hours: float, tol: float = FEAS_TOL) -> list[str]:
        problems = []
        series = {
            "grid_import": self.grid_import, "grid_export": self.grid_export,
            "pv_to_load": self.pv_to_load, "pv_to_batt": self.pv_to_batt,
            "batt_to_load": self.batt_to_load, "soc": self.soc, "curtailment": self.curtailment,
        }
        for name, s in series.items():
            if np.min(s, initial=0.0) < -tol:
                problems.append(f"{name} negative ({np.min(s):.3g})")
        lo = battery.soc_min * self.battery_capacity - tol
        hi = battery.soc_max * self.battery_capacity + tol
        if np.any(self.soc < lo) or np.any(self.soc > hi):
            problems.append("soc outside bounds")
        bal = self.load - self.grid_import - self.pv_to_load - self.batt_to_load
        if np.max(np.abs(bal), initial=0.0) > tol:
            problems.append(f"load balance off by {np.max(np.abs(bal)):.3g}")
        pv_bal = self.pv_gen - self.pv_to_load - self.pv_to_batt - self.grid_export - self.curtailment
        if np.max(np.abs(pv_bal), initial=0.0) > tol:
            problems.append(f"PV balance off by {np.max(np.abs(pv_bal)):.3g}")
        nxt = np.roll(self.soc, -1)
        rec = (self.soc + battery.charge_efficiency * self.pv_to_batt * step_hours
               - self.batt_to_load / battery.discharge_efficiency * step_hours)
        if np.max(np.abs(nxt - rec), initial=0.0) > tol:
            problems.append(f"SOC recursion off by {np.max(np.abs(nxt - rec)):.3g}")
        if np.max(np.minimum(self.grid_import, self.grid_export), initial=0.0) > tol:
            problems.append("simultaneous import and export")
        return problems

    def summary(self) -> dict:
        return {
            "building_id": self.building_id,
            "pv_kw": self.pv_capacity,
            "batt_kwh": self.battery_capacity,
            "tco": self.tco,
            "optimal": self.optimal,
        }

    def to_csv(self, path) -> None:
        """One row per step, plus a ``<path>.json`` sidecar with the sizes and cost."""
        cols = ("grid_import", "grid_export", "pv_to_load", "pv_to_batt", "batt_to_load", "soc")
        header = ("import", "export", "pv_to_load", "pv_to_batt", "batt_to_load", "soc")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*(getattr(self, c) for c in cols)):
                w.writerow([f"{v:.6g}" for v in row])
        with open(f"{path}.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def annuity_factor(rate: float, lifetime: float) -> float:
    if rate == 0:
        return 1.0 / lifetime
    growth = (1 + rate) ** lifetime
    return rate * growth / (growth - 1)


# ---------------------------------------------------------------------------
# program construction


@dataclass(eq=False)
class MathProgram:
    """``min c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``lb <= x <= ub``."""

    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    index: dict  # block name -> slice
    building: Building
    schedule: TariffSchedule
    costs: CostModel
    battery: BatteryParams
    capex_fraction: float
    row_names: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def binaries(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.integrality)]

    def var(self, name: str, t: int | None = None) -> int:
        sl = self.index[name]
        return sl.start if t is None else sl.start + t

    def with_bounds(self, name: str, lo: float, hi: float) -> "MathProgram":
        lb, ub = self.lb.copy(), self.ub.copy()
        lb[self.index[name]] = lo
        ub[self.index[name]] = hi
        return replace(self, lb=lb, ub=ub)

    def var_names(self) -> list[str]:
        names = [""] * self.n_vars
        for block, sl in self.index.items():
            width = sl.stop - sl.start
            for i in range(width):
                names[sl.start + i] = block if width == 1 and block not in STEP_BLOCKS else f"{block}_{i}"
        return names

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def to_lp(self) -> str:
        """CPLEX LP text for cross-checking with external solvers."""
        names = self.var_names()

        def expr(row_idx, row_val):
            parts = []
            for j, v in zip(row_idx, row_val):
                if v == 0:
                    continue
                parts.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[j]}")
            text = " ".join(parts) or "0 " + names[0]
            return text[2:] if text.startswith("+ ") else text

        lines = [f"\\ {self.building.building_id} / {self.schedule.name}", "Minimize"]
        nz = np.flatnonzero(self.c)
        lines.append(" obj: " + expr(nz, self.c[nz]))
        lines.append("Subject To")
        for tag, A, b, op in (("e", self.A_eq, self.b_eq, "="), ("u", self.A_ub, self.b_ub, "<=")):
            A = A.tocsr()
            for r in range(A.shape[0]):
                lo, hi = A.indptr[r], A.indptr[r + 1]
                lines.append(f" {tag}{r}: {expr(A.indices[lo:hi], A.data[lo:hi])} {op} {b[r]:.17g}")
        lines.append("Bounds")
        for j, name in enumerate(names):
            lo, hi = self.lb[j], self.ub[j]
            hi_txt = "+inf" if np.isinf(hi) else f"{hi:.17g}"
            lines.append(f" {lo:.17g} <= {name} <= {hi_txt}")
        if self.binaries:
            lines.append("Binaries")
            lines.extend(f" {names[j]}" for j in self.binaries)
        lines.append("End")
        return "\n".join(lines) + "\n"


class _Layout:
    def __init__(self):
        self.index: dict[str, slice] = {}
        self.size = 0

    def add(self, name: str, width: int) -> slice:
        sl = slice(self.size, self.size + width)
        self.index[name] = sl
        self.size += width
        return sl


class _Rows:
    """Accumulates sparse rows as COO triplets."""

    def __init__(self):
        self.r: list[np.ndarray] = []
        self.c: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []
        self.n = 0

    def block(self, n_rows: int, terms, rhs) -> None:
        rows = self.n + np.arange(n_rows)
        for cols, vals in terms:
            cols = np.broadcast_to(np.asarray(cols), (n_rows,))
            vals = np.broadcast_to(np.asarray(vals, dtype=float), (n_rows,))
            self.r.append(rows)
            self.c.append(cols)
            self.v.append(vals)
        self.rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (n_rows,)))
        self.n += n_rows

    def matrix(self, n_cols: int):
        if not self.n:
            return sp.csr_matrix((0, n_cols)), np.zeros(0)
        A = sp.coo_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=(self.n, n_cols),
        ).tocsr()
        A.sum_duplicates()
        return A, np.concatenate(self.rhs).astype(float)


def formulate_program(
    building: Building,
    schedule: TariffSchedule,
    costs: CostModel | None = None,
    battery: BatteryParams | None = None,
    pv_sizes=None,
    battery_sizes=None,
    max_battery_capacity: float | None = None,
) -> MathProgram:
    """Build the sizing-and-dispatch program.

    ``pv_sizes`` / ``battery_sizes`` restrict the capacities to discrete
    candidate sets through one-hot binaries (solved as a MILP).
    """
    costs = costs or CostModel()
    battery = battery or BatteryParams()
    T = len(schedule.grid)
    if len(building.load) != T:
        raise ValueError(
            f"{building.building_id}: profiles have {len(building.load)} steps, schedule has {T}"
        )
    ts = schedule.timestep_hours
    frac = schedule.grid.year_fraction

    lay = _Layout()
    idx = {name: lay.add(name, T) for name in STEP_BLOCKS}
    ix = {k: np.arange(s.start, s.stop) for k, s in idx.items()}
    pv_cap = lay.add("pv_cap", 1).start
    batt_cap = lay.add("batt_cap", 1).start
    y_pv = lay.add("y_pv", 1).start
    y_batt = lay.add("y_batt", 1).start if costs.battery_fixed_cost > 0 else None
    K = schedule.n_periods if schedule.capacity_rule is not None else 0
    peak = lay.add("peak", K) if K else None
    u = lay.add("u_pv", len(pv_sizes)) if pv_sizes is not None else None
    v = lay.add("u_batt", len(battery_sizes)) if battery_sizes is not None else None
    n = lay.size

    c = np.zeros(n)
    c[ix["imp"]] = schedule.import_price * ts
    c[ix["exp"]] = -schedule.export_price * ts
    c[pv_cap] = frac * (costs.pv_annuity * costs.pv_specific_cost + costs.pv_maintenance)
    c[batt_cap] = frac * costs.battery_annuity * costs.battery_specific_cost
    c[y_pv] = frac * costs.pv_annuity * costs.pv_fixed_cost
    if y_batt is not None:
        c[y_batt] = frac * costs.battery_annuity * costs.battery_fixed_cost
    if K:
        c[peak] = schedule.effective_period_rates

    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    ub[y_pv] = 1.0
    if y_batt is not None:
        ub[y_batt] = 1.0
    if building.max_pv_capacity <= 0:
        ub[pv_cap] = 0.0
    integrality = np.zeros(n, dtype=int)
    integrality[y_pv] = 1
    if y_batt is not None:
        integrality[y_batt] = 1

    eq, le = _Rows(), _Rows()
    eq.block(T, [(ix["imp"], 1), (ix["pv_load"], 1), (ix["batt_load"], 1)], building.load)
    eq.block(
        T,
        [(ix["pv_load"], 1), (ix["pv_batt"], 1), (ix["exp"], 1), (ix["curt"], 1),
         (pv_cap, -building.pv_per_kw)],
        0.0,
    )
    eq.block(
        T,
        [(np.roll(ix["soc"], -1), 1), (ix["soc"], -1),
         (ix["pv_batt"], -battery.charge_efficiency * ts),
         (ix["batt_load"], ts / battery.discharge_efficiency)],
        0.0,
    )
    le.block(T, [(ix["soc"], 1), (batt_cap, -battery.soc_max)], 0.0)
    if battery.soc_min > 0:
        le.block(T, [(ix["soc"], -1), (batt_cap, battery.soc_min)], 0.0)
    le.block(T, [(ix["pv_batt"], 1), (batt_cap, -battery.max_c_rate)], 0.0)
    le.block(T, [(ix["batt_load"], 1), (batt_cap, -battery.max_c_rate)], 0.0)
    le.block(1, [(pv_cap, 1), (y_pv, -building.max_pv_capacity)], 0.0)
    if y_batt is not None:
        big_m = max_battery_capacity or _battery_big_m(building, battery, ts)
        le.block(1, [(batt_cap, 1), (y_batt, -big_m)], 0.0)
    if max_battery_capacity is not None:
        ub[batt_cap] = max_battery_capacity
    if K:
        le.block(T, [(ix["imp"], 1), (peak.start + schedule.period_ids, -1)], 0.0)

    for sizes, sel, cap in ((pv_sizes, u, pv_cap), (battery_sizes, v, batt_cap)):
        if sizes is None:
            continue
        sizes = np.asarray(sizes, dtype=float)
        cols = np.arange(sel.start, sel.stop)
        eq.r.append(np.full(len(cols) + 1, eq.n))
        eq.c.append(np.concatenate([[cap], cols]))
        eq.v.append(np.concatenate([[1.0], -sizes]))
        eq.rhs.append(np.zeros(1))
        eq.n += 1
        eq.r.append(np.full(len(cols), eq.n))
        eq.c.append(cols)
        eq.v.append(np.ones(len(cols)))
        eq.rhs.append(np.ones(1))
        eq.n += 1
        ub[sel] = 1.0
        integrality[sel] = 1

    A_eq, b_eq = eq.matrix(n)
    A_ub, b_ub = le.matrix(n)
    return MathProgram(
        c, A_ub, b_ub, A_eq, b_eq, lb, ub, integrality, lay.index,
        building, schedule, costs, battery, frac,
    )


def _battery_big_m(building: Building, battery: BatteryParams, ts: float) -> float:
    # storing more than the whole horizon's demand is never useful
    return float(building.load.sum() * ts / (battery.soc_max - battery.soc_min)) + 1.0


# ---------------------------------------------------------------------------
# solving


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-9
    time_limit: float | None = None
    method: str = "highs-ds"


def solve_design(program: MathProgram, options: SolverOptions | None = None) -> SystemDesign:
    """Solve a program built by :func:`formulate_program`.

    With only the gating binaries present, every binary combination is
    solved as an LP and the cheapest kept. Discrete-size programs go to the
    MILP solver.
    """
    options = options or SolverOptions()
    gates = [program.var("y_pv")]
    if "y_batt" in program.index:
        gates.append(program.var("y_batt"))
    if set(program.binaries) - set(gates):
        x, obj, optimal = _solve_milp(program, options)
        return _extract(program, x, obj, optimal)

    best = None
    for combo in itertools.product((0.0, 1.0), repeat=len(gates)):
        lb, ub = program.lb.copy(), program.ub.copy()
        lb[gates] = combo
        ub[gates] = combo
        if combo[0] == 0.0:
            ub[program.var("pv_cap")] = 0.0
        elif program.building.max_pv_capacity <= 0:
            continue  # PV gate open without any roof: dominated by combo 0
        if len(gates) > 1 and combo[1] == 0.0:
            ub[program.var("batt_cap")] = 0.0
        result = _solve_lp(program, lb, ub, options)
        if result is None:
            continue
        x, obj, optimal = result
        if best is None or obj < best[1] - 1e-12 * max(1.0, abs(obj)):
            best = (x, obj, optimal)
    if best is None:
        raise InfeasibleDesign(f"{program.building.building_id}: no feasible design found")
    return _extract(program, *best)


def _solve_lp(program: MathProgram, lb, ub, options: SolverOptions):
    opts = {
        "primal_feasibility_tolerance": options.tolerance,
        "dual_feasibility_tolerance": options.tolerance,
        "presolve": True,
    }
    if options.time_limit is not None:
        opts["time_limit"] = options.time_limit
    res = linprog(
        program.c,
        A_ub=program.A_ub if program.A_ub.shape[0] else None,
        b_ub=program.b_ub if program.A_ub.shape[0] else None,
        A_eq=program.A_eq,
        b_eq=program.b_eq,
        bounds=np.column_stack([lb, ub]),
        method=options.method,
        options=opts,
    )
    if res.status == 0:
        return res.x, float(res.fun), True
    if res.status == 1 and res.x is not None:
        log.warning("%s: LP stopped early (%s)", program.building.building_id, res.message)
        return res.x, float(res.fun), False
    if res.status == 2:
        return None
    raise InfeasibleDesign(f"{program.building.building_id}: LP failed: {res.message}")


def _solve_milp(program: MathProgram, options: SolverOptions):
    constraints = [LinearConstraint(program.A_eq, program.b_eq, program.b_eq)]
    if program.A_ub.shape[0]:
        constraints.append(LinearConstraint(program.A_ub, -np.inf, program.b_ub))
    opts = {"mip_rel_gap": 1e-10}
    if options.time_limit is not None:
        opts["time_limit"] = options.time_limit
    res = milp(
        program.c,
        constraints=constraints,
        integrality=program.integrality,
        bounds=Bounds(program.lb, program.ub),
        options=opts,
    )
    if res.x is None:
        raise InfeasibleDesign(f"{program.building.building_id}: MILP failed: {res.message}")
    return res.x, float(res.fun), res.status == 0


def _extract(program: MathProgram, x: np.ndarray, obj: float, optimal: bool) -> SystemDesign:
    b = program.building
    get = {name: np.array(x[program.index[name]]) for name in STEP_BLOCKS}
    for arr in get.values():
        arr[np.abs(arr) < _CLEAN_TOL] = 0.0
        np.maximum(arr, 0.0, out=arr)
    pv_kw = max(float(x[program.var("pv_cap")]), 0.0)
    batt_kwh = max(float(x[program.var("batt_cap")]), 0.0)
    if pv_kw < _CLEAN_TOL:
        pv_kw = 0.0
    if batt_kwh < _CLEAN_TOL:
        batt_kwh = 0.0

    imp, exp, pv_load = get["imp"], get["exp"], get["pv_load"]
    # any residual simultaneous import/export is solver noise; net it through pv_to_load
    both = np.minimum(imp, exp)
    imp -= both
    exp -= both
    pv_load += both

    pv_gen = b.pv_per_kw * pv_kw
    # re-close the balances exactly after cleaning: import absorbs the load
    # residual and curtailment the PV residual
    imp = np.maximum(b.load - pv_load - get["batt_load"], 0.0)
    curt = np.maximum(pv_gen - pv_load - get["pv_batt"] - exp, 0.0)

    design = SystemDesign(
        building_id=b.building_id,
        pv_capacity=pv_kw,
        battery_capacity=batt_kwh,
        grid_import=imp,
        grid_export=exp,
        pv_to_load=pv_load,
        pv_to_batt=get["pv_batt"],
        batt_to_load=get["batt_load"],
        soc=get["soc"],
        load=np.array(b.load, dtype=float),
        pv_gen=pv_gen,
        curtailment=curt,
        tco=0.0,
        objective=obj + program.schedule.fixed_charge,  # the LP leaves out the constant fee
        optimal=optimal,
    )
    design.capex = program.capex_fraction * program.costs.annual_capex(pv_kw, batt_kwh)
    design.tco = design.capex + bill(program.schedule, design).total
    return design


def optimize_building(
    building: Building,
    schedule: TariffSchedule,
    costs: CostModel | None = None,
    battery: BatteryParams | None = None,
    options: SolverOptions | None = None,
) -> SystemDesign:
    return solve_design(formulate_program(building, schedule, costs, battery), options)


def dispatch_fixed(
    building: Building,
    schedule: TariffSchedule,
    battery: BatteryParams | None,
    pv_capacity: float,
    battery_capacity: float,
    costs: CostModel | None = None,
    options: SolverOptions | None = None,
) -> SystemDesign:
    """Cost-optimal dispatch with the capacities held fixed."""
    if pv_capacity < 0 or battery_capacity < 0:
        raise ValueError("capacities must be >= 0")
    # the roof limit does not bind fixed sizes
    b = replace(building, max_pv_capacity=max(building.max_pv_capacity, pv_capacity))
    program = formulate_program(b, schedule, costs, battery)
    program = program.with_bounds("pv_cap", pv_capacity, pv_capacity)
    program = program.with_bounds("batt_cap", battery_capacity, battery_capacity)
    gate = 1.0 if pv_capacity > 0 else 0.0
    program = program.with_bounds("y_pv", gate, gate)
    if "y_batt" in program.index:
        g = 1.0 if battery_capacity > 0 else 0.0
        program = program.with_bounds("y_batt", g, g)
    design = solve_design(program, options)
    # solve_design may have snapped tiny sizes to zero; keep the requested ones
    design.pv_capacity = float(pv_capacity)
    design.battery_capacity = float(battery_capacity)
    design.capex = program.capex_fraction * program.costs.annual_capex(pv_capacity, battery_capacity)
    design.tco = design.capex + bill(schedule, design).total
    return design

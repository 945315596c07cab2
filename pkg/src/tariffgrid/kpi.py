"""Building KPIs, rank-sum tests and the CSV report set.

Energy totals in reports are annualised by dividing horizon sums by the
grid's year fraction, so a four-week run and a full year share units.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .powerflow import OverloadReport, PowerFlowResult, voltage_line_stats
from .tariffs import BillBreakdown
from .timegrid import TimeGrid


def sc_ss(design) -> tuple[float, float]:
    """Self-consumption and self-sufficiency; 0 when the denominator is 0."""
    gen = float(np.sum(design.pv_gen))
    load = float(np.sum(design.load))
    local = float(np.sum(design.pv_to_load) + np.sum(design.pv_to_batt))
    covered = float(np.sum(design.pv_to_load) + np.sum(design.batt_to_load))
    sc = min(1.0, max(0.0, local / gen)) if gen > 0 else 0.0
    ss = min(1.0, max(0.0, covered / load)) if load > 0 else 0.0
    return sc, ss


@dataclass
class PeakStats:
    labels: np.ndarray  # month number or day-of-year
    peaks: np.ndarray  # kW
    aggregate: float


def peak_stats(design, grid: TimeGrid, horizon: str = "monthly") -> PeakStats:
    labels, _, ids = grid.period_index(horizon)
    imp = np.asarray(design.grid_import, dtype=float)
    peaks = np.zeros(len(labels))
    np.maximum.at(peaks, ids, imp)
    return PeakStats(labels, peaks, float(imp.max(initial=0.0)))


@dataclass
class BuildingKpi:
    building_id: str
    self_consumption: float
    self_sufficiency: float
    annual_import: float  # kWh
    annual_export: float  # kWh
    annual_bill: float
    peak_import_by_period: list[float]
    pv_capacity: float = 0.0
    battery_capacity: float = 0.0
    grid_portion: float = 0.0

    @property
    def net_producer(self) -> bool:
        return self.annual_export > self.annual_import


def building_kpi(design, grid: TimeGrid, bill: BillBreakdown | None = None, horizon: str = "monthly") -> BuildingKpi:
    sc, ss = sc_ss(design)
    scale = grid.step_hours / grid.year_fraction
    annual = 1.0 / grid.year_fraction
    return BuildingKpi(
        design.building_id, sc, ss,
        float(np.sum(design.grid_import)) * scale,
        float(np.sum(design.grid_export)) * scale,
        bill.total * annual if bill is not None else float("nan"),
        peak_stats(design, grid, horizon).peaks.tolist(),
        design.pv_capacity, design.battery_capacity,
        bill.grid_portion * annual if bill is not None else float("nan"),
    )


# Rank-sum test

def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided(doubled: np.ndarray, n: int, observed: int) -> float:
    """P(|W - E| >= |w - E|) for the sum of ``n`` of the doubled ranks."""
    total = int(doubled.sum())
    N = len(doubled)
    # dp[k, s]: number of size-k subsets with doubled-rank sum s
    dp = np.zeros((n + 1, total + 1))
    dp[0, 0] = 1.0
    for r in doubled.astype(int):
        dp[1:, r:] += dp[:-1, :total + 1 - r].copy()
    counts = dp[n]
    mean2 = n * total / N  # E[W] in doubled units, may be fractional
    dev = abs(observed - mean2)
    sums = np.arange(total + 1)
    extreme = np.abs(sums - mean2) >= dev - 1e-9
    return float(min(1.0, counts[extreme].sum() / counts.sum()))


def rank_sum_test(a: Sequence[float], b: Sequence[float], exact_max: int = 8) -> float:
    """Two-sided Wilcoxon rank-sum (Mann-Whitney) p-value.

    Exact permutation distribution over midranks when the smaller sample has
    at most ``exact_max`` values, otherwise the normal approximation with tie
    and continuity corrections.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    x = np.concatenate([a, b])
    if np.all(x == x[0]):
        return 1.0
    n, m = len(a), len(b)
    ranks = _midranks(x)
    if min(n, m) <= exact_max:
        doubled = np.rint(2 * ranks).astype(int)
        small = doubled[:n] if n <= m else doubled[n:]
        return _exact_two_sided(doubled, min(n, m), int(small.sum()))
    N = n + m
    u = ranks[:n].sum() - n * (n + 1) / 2
    _, t = np.unique(x, return_counts=True)
    var = n * m / 12.0 * ((N + 1) - np.sum(t ** 3 - t) / (N * (N - 1)))
    if var <= 0:
        return 1.0
    z = max(0.0, abs(u - n * m / 2.0) - 0.5) / math.sqrt(var)
    return float(min(1.0, math.erfc(z / math.sqrt(2))))


# Report

@dataclass
class TariffRun:
    """Everything computed for one (network, tariff) pair."""

    network: str
    tariff: str
    grid: TimeGrid
    designs: Mapping  # building id -> SystemDesign
    bills: Mapping[str, BillBreakdown]
    reference_revenue: float | None = None  # grid revenue targeted by calibration
    powerflow: PowerFlowResult | None = None
    overload: OverloadReport | None = None
    injection_buses: Sequence[str] | None = None
    hosting: str | None = None
    calibration_factor: float | None = None


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else "%.6g" % v
    return str(v)


def _write(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


@dataclass
class ReportFiles:
    written: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)


def emit_report(
    runs: Sequence[TariffRun],
    out_dir,
    references: Sequence[str] = ("FT reference", "DT reference"),
    networks: Sequence[str] | None = None,
    tariffs: Sequence[str] | None = None,
) -> ReportFiles:
    """Write ``tables/*.csv`` and ``plotdata/*.csv`` under ``out_dir``.

    ``networks`` and ``tariffs`` name the expected scenario set; pairs with
    no run are listed in ``tables/missing.csv`` and the rest is still written.
    """
    if not runs:
        raise ValueError("no completed scenario to report")
    tables = os.path.join(out_dir, "tables")
    plots = os.path.join(out_dir, "plotdata")
    os.makedirs(tables, exist_ok=True)
    os.makedirs(plots, exist_ok=True)
    files = ReportFiles()

    def out(path, header, rows):
        _write(path, header, rows)
        files.written.append(os.path.relpath(path, out_dir))

    networks = list(networks) if networks is not None else list(dict.fromkeys(r.network for r in runs))
    tariffs = list(tariffs) if tariffs is not None else list(dict.fromkeys(r.tariff for r in runs))
    by_key = {(r.network, r.tariff): r for r in runs}
    kpis = {
        key: {bid: building_kpi(d, r.grid, r.bills.get(bid)) for bid, d in sorted(r.designs.items())}
        for key, r in by_key.items()
    }

    cap_rows, rec_rows, bkpi_rows = [], [], []
    for net in networks:
        for tariff in tariffs:
            r = by_key.get((net, tariff))
            if r is None:
                files.missing.append(f"{net}/{tariff}")
                continue
            ks = kpis[(net, tariff)].values()
            cap_rows.append((net, tariff, len(r.designs), sum(k.pv_capacity for k in ks),
                             sum(k.battery_capacity for k in ks), sum(k.annual_import for k in ks) / 1e3,
                             sum(k.annual_export for k in ks) / 1e3,
                             float(np.mean([k.self_sufficiency for k in ks])) if ks else 0.0))
            annual = 1.0 / r.grid.year_fraction
            revenue = sum(b.dso_revenue for b in r.bills.values()) * annual
            ref = r.reference_revenue * annual if r.reference_revenue is not None else float("nan")
            recovery = sum(b.grid_portion for b in r.bills.values()) * annual
            rec_rows.append((net, tariff, sum(b.total for b in r.bills.values()) * annual, revenue, recovery, ref,
                             revenue / ref - 1.0 if r.reference_revenue else float("nan"),
                             r.calibration_factor if r.calibration_factor is not None else float("nan")))
            for k in ks:
                bkpi_rows.append((net, tariff, k.building_id, k.pv_capacity, k.battery_capacity,
                                  k.self_consumption, k.self_sufficiency, k.annual_import, k.annual_export,
                                  k.net_producer, k.annual_bill, k.grid_portion,
                                  max(k.peak_import_by_period, default=0.0)))

    out(os.path.join(tables, "capacities.csv"),
        ("network", "tariff", "buildings", "pv_kw", "battery_kwh", "import_mwh", "export_mwh", "mean_ss"), cap_rows)
    out(os.path.join(tables, "grid_recovery.csv"),
        ("network", "tariff", "bill_total", "grid_revenue", "grid_cost_recovery", "reference_revenue", "relative_gap", "calibration_factor"),
        rec_rows)
    out(os.path.join(tables, "building_kpis.csv"),
        ("network", "tariff", "building", "pv_kw", "battery_kwh", "sc", "ss", "import_kwh", "export_kwh",
         "net_producer", "bill", "grid_portion", "peak_import_kw"), bkpi_rows)

    # bill and voltage comparisons against the reference tariffs
    stats_by_key = {}
    for key, r in by_key.items():
        if r.powerflow is not None:
            stats_by_key[key] = voltage_line_stats(r.powerflow, buses=r.injection_buses)
    test_rows = []
    for net in networks:
        for ref in references:
            if (net, ref) not in by_key:
                continue
            for tariff in tariffs:
                if tariff == ref or (net, tariff) not in by_key:
                    continue
                a = [k.annual_bill for k in kpis[(net, tariff)].values()]
                b = [k.annual_bill for k in kpis[(net, ref)].values()]
                test_rows.append((net, "bill", tariff, ref, rank_sum_test(a, b)))
                if (net, tariff) in stats_by_key and (net, ref) in stats_by_key:
                    va = [s.p95_over for s in stats_by_key[(net, tariff)][0]]
                    vb = [s.p95_over for s in stats_by_key[(net, ref)][0]]
                    test_rows.append((net, "voltage_p95_over", tariff, ref, rank_sum_test(va, vb)))
    out(os.path.join(tables, "rank_sum.csv"), ("network", "metric", "tariff", "reference", "p_value"), test_rows)

    hosting = [(r.network, r.tariff, r.hosting) for r in runs if r.hosting is not None]
    if hosting:
        out(os.path.join(tables, "hosting_capacity.csv"), ("network", "tariff", "pv_scale"), hosting)
    if files.missing:
        out(os.path.join(tables, "missing.csv"), ("scenario",), [(m,) for m in files.missing])

    out(os.path.join(plots, "bill_distribution.csv"), ("network", "tariff", "building", "bill", "grid_portion"),
        [(row[0], row[1], row[2], row[10], row[11]) for row in bkpi_rows])
    out(os.path.join(plots, "energy_matching.csv"),
        ("network", "tariff", "building", "import_kwh", "export_kwh", "net_producer"),
        [(row[0], row[1], row[2], row[7], row[8], row[9]) for row in bkpi_rows])

    ld_rows, ev_rows, v_rows, l_rows = [], [], [], []
    for net in networks:
        for tariff in tariffs:
            r = by_key.get((net, tariff))
            if r is None:
                continue
            if r.overload is not None:
                # plotted with MV-to-LV flow negative, i.e. reverse flow positive
                for i, v in enumerate(-r.overload.load_duration[::-1]):
                    ld_rows.append((net, tariff, i + 1, (i + 1) * r.grid.step_hours, v, r.overload.rating))
                for e in r.overload.events:
                    ev_rows.append((net, tariff, e.start, e.duration_min, e.peak_loading, e.permissible,
                                    e.violates_curve))
            if (net, tariff) in stats_by_key:
                buses, lines = stats_by_key[(net, tariff)]
                v_rows += [(net, tariff, s.bus_id, s.p95_over, s.p95_under, s.n_over_limit, s.n_under_limit)
                           for s in buses]
                l_rows += [(net, tariff, s.line_id, s.p95_loading, s.max_loading, s.n_overloaded) for s in lines]
    if ld_rows:
        out(os.path.join(plots, "load_duration.csv"),
            ("network", "tariff", "rank", "hours", "reverse_flow_kw", "rating_kva"), ld_rows)
        out(os.path.join(plots, "overload_events.csv"),
            ("network", "tariff", "start", "duration_min", "peak_loading", "permissible", "violates_curve"), ev_rows)
    if v_rows:
        out(os.path.join(plots, "voltage_percentiles.csv"),
            ("network", "tariff", "bus", "p95_over", "p95_under", "n_over_1.1", "n_under_0.9"), v_rows)
        out(os.path.join(plots, "line_loading.csv"),
            ("network", "tariff", "line", "p95_loading", "max_loading", "n_overloaded"), l_rows)
    return files

"""Tariff structures, price schedules, bills and revenue calibration.

Rates are held in currency/kWh and currency/kW internally; config files use
cents/kWh for volumetric components and currency/kW for capacity charges.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .timegrid import TimeGrid

TAX = 0.0292
EXPORT_PRICE = 0.095

ALL_MONTHS = frozenset(range(1, 13))
WEEKDAYS = frozenset(range(5))
EVERY_DAY = frozenset(range(7))
# two-season split used by the DT variants: summer is 1 April - 30 September
SUMMER_HALF = frozenset(range(4, 10))
WINTER_HALF = ALL_MONTHS - SUMMER_HALF
# meteorological seasons for the daily capacity charge
DEFAULT_CT_SEASONS = {
    "winter": frozenset({12, 1, 2}),
    "fall_spring": frozenset({3, 4, 5, 9, 10, 11}),
    "summer": frozenset({6, 7, 8}),
}


class TariffError(ValueError):
    pass


def _check_partition(month_sets, what: str) -> None:
    seen: list[int] = []
    for months in month_sets:
        seen.extend(months)
    if sorted(seen) != list(range(1, 13)):
        raise TariffError(f"{what} must partition the 12 months exactly")


def _slug(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


@dataclass(frozen=True)
class PriceComponents:
    energy_cost: float
    grid_cost: float
    tax: float = TAX

    def __post_init__(self) -> None:
        for name in ("energy_cost", "grid_cost", "tax"):
            if getattr(self, name) < 0:
                raise TariffError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def total(self) -> float:
        return self.energy_cost + self.grid_cost + self.tax

    @classmethod
    def from_cents(cls, energy: float, grid: float, tax: float = TAX * 100) -> "PriceComponents":
        return cls(energy / 100, grid / 100, tax / 100)


@dataclass(frozen=True)
class PeakWindow:
    """Peak hours ``[start_hour, end_hour)`` on the given weekdays (Mon = 0)."""

    days: frozenset = WEEKDAYS
    start_hour: float = 6.0
    end_hour: float = 22.0

    def __post_init__(self) -> None:
        if not 0 <= self.start_hour < self.end_hour <= 24:
            raise TariffError(f"bad peak window {self.start_hour}-{self.end_hour}")
        if not set(self.days) <= EVERY_DAY:
            raise TariffError("peak window days must be weekday numbers 0..6")

    def mask(self, grid: TimeGrid) -> np.ndarray:
        hour = grid.hour
        return (
            np.isin(grid.weekday, sorted(self.days))
            & (hour >= self.start_hour)
            & (hour < self.end_hour)
        )


@dataclass(frozen=True)
class SeasonRates:
    """Volumetric prices for one season; ``peak`` applies inside ``window``."""

    months: frozenset
    offpeak: PriceComponents
    peak: PriceComponents | None = None
    window: PeakWindow | None = None

    def __post_init__(self) -> None:
        if (self.peak is None) != (self.window is None):
            raise TariffError("peak prices and peak window must be given together")


@dataclass(frozen=True)
class CapacityChargeRule:
    horizon: str  # "monthly" | "daily"
    rate_by_season: Mapping[str, float]
    season_calendar: Mapping[str, frozenset]

    def __post_init__(self) -> None:
        if self.horizon not in ("monthly", "daily"):
            raise TariffError(f"capacity horizon must be monthly or daily, got {self.horizon!r}")
        _check_partition(self.season_calendar.values(), "capacity season calendar")
        if set(self.rate_by_season) != set(self.season_calendar):
            raise TariffError("capacity rates and season calendar name different seasons")
        if any(r < 0 for r in self.rate_by_season.values()):
            raise TariffError("capacity rates must be >= 0")

    def rate_for_month(self, month: int) -> float:
        for season, months in self.season_calendar.items():
            if month in months:
                return self.rate_by_season[season]
        raise TariffError(f"month {month} not covered by the season calendar")

    def scaled(self, factor: float) -> "CapacityChargeRule":
        rates = {k: v * factor for k, v in self.rate_by_season.items()}
        return replace(self, rate_by_season=rates)


@dataclass(frozen=True)
class TariffSpec:
    """A named tariff before it is laid out on a time grid.

    ``dynamic_median`` switches to the load-proportional structure: energy and
    grid components both equal ``dynamic_median * L_t / median(L)``.
    """

    name: str
    seasons: tuple[SeasonRates, ...] = ()
    capacity: CapacityChargeRule | None = None
    dynamic_median: float | None = None
    export_price: float = EXPORT_PRICE
    fixed_fee: float = 0.0
    tax: float = TAX

    def __post_init__(self) -> None:
        if self.dynamic_median is None:
            _check_partition([s.months for s in self.seasons], f"tariff {self.name!r} seasons")
        elif self.dynamic_median < 0:
            raise TariffError("dynamic_median must be >= 0")
        if self.export_price < 0 or self.fixed_fee < 0:
            raise TariffError("export price and fixed fee must be >= 0")

    @property
    def is_dynamic(self) -> bool:
        return self.dynamic_median is not None


@dataclass(frozen=True, eq=False)
class TariffSchedule:
    """Per-step import price components on a grid, plus capacity rules."""

    name: str
    grid: TimeGrid
    energy_cost: np.ndarray
    grid_cost: np.ndarray
    tax: np.ndarray
    export_price: float
    capacity_rule: CapacityChargeRule | None = None
    fixed_fee: float = 0.0
    # capacity-period layout, filled by build_schedule when capacity_rule is set
    period_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    period_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    period_rates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    period_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def timestep_hours(self) -> float:
        return self.grid.step_hours

    @property
    def import_price(self) -> np.ndarray:
        return self.energy_cost + self.grid_cost + self.tax

    @property
    def n_periods(self) -> int:
        return len(self.period_labels)

    @property
    def effective_period_rates(self) -> np.ndarray:
        """Capacity rate of each period times its proration weight."""
        return self.period_rates * self.period_weights

    def components_at(self, t: int) -> PriceComponents:
        return PriceComponents(
            float(self.energy_cost[t]), float(self.grid_cost[t]), float(self.tax[t])
        )

    @property
    def fixed_charge(self) -> float:
        return 12 * self.fixed_fee * self.grid.year_fraction


@dataclass(frozen=True)
class GridExchange:
    """Import/export series of one building; SystemDesign satisfies the same protocol."""

    grid_import: np.ndarray
    grid_export: np.ndarray


@dataclass(frozen=True)
class BillBreakdown:
    volumetric_import: float
    export_credit: float
    capacity_charge: float
    per_period_peaks: list
    grid_portion: float
    tax_portion: float = 0.0
    fixed_charge: float = 0.0

    @property
    def total(self) -> float:
        return self.volumetric_import - self.export_credit + self.capacity_charge + self.fixed_charge

    @property
    def dso_revenue(self) -> float:
        """Revenue kept by the utility: sales net of taxes, minus export payments."""
        return self.total - self.tax_portion


# ---------------------------------------------------------------------------
# reference tariffs

FT_PRICES = PriceComponents.from_cents(7.98, 8.45)
DT_PEAK = PriceComponents.from_cents(9.17, 9.86)
DT_OFFPEAK = PriceComponents.from_cents(5.87, 5.26)
CT_VOLUMETRIC = PriceComponents.from_cents(7.98, 0.0)
DYNAMIC_MEDIAN = 0.1076


def _dt_season(months) -> SeasonRates:
    return SeasonRates(frozenset(months), DT_OFFPEAK, DT_PEAK, PeakWindow(WEEKDAYS, 6, 22))


def reference_tariffs() -> dict[str, TariffSpec]:
    """The seven tariff structures with their published coefficients."""
    ct_daily_rates = {"summer": 0.5312, "fall_spring": 0.9296, "winter": 1.3280}
    return {
        "FT reference": TariffSpec("FT reference", (SeasonRates(ALL_MONTHS, FT_PRICES),)),
        "DT reference": TariffSpec("DT reference", (_dt_season(ALL_MONTHS),)),
        "DT solar": TariffSpec(
            "DT solar",
            (
                SeasonRates(SUMMER_HALF, DT_OFFPEAK, DT_PEAK, PeakWindow(EVERY_DAY, 18, 24)),
                _dt_season(WINTER_HALF),
            ),
        ),
        "DT summer flat": TariffSpec(
            "DT summer flat",
            (SeasonRates(SUMMER_HALF, FT_PRICES), _dt_season(WINTER_HALF)),
        ),
        "Dynamic": TariffSpec("Dynamic", dynamic_median=DYNAMIC_MEDIAN),
        "CT monthly": TariffSpec(
            "CT monthly",
            (SeasonRates(ALL_MONTHS, CT_VOLUMETRIC),),
            capacity=CapacityChargeRule("monthly", {"all": 16.4}, {"all": ALL_MONTHS}),
        ),
        "CT daily": TariffSpec(
            "CT daily",
            (SeasonRates(ALL_MONTHS, CT_VOLUMETRIC),),
            capacity=CapacityChargeRule("daily", ct_daily_rates, dict(DEFAULT_CT_SEASONS)),
        ),
    }


TARIFF_NAMES = tuple(reference_tariffs())
REFERENCE_NAMES = ("FT reference", "DT reference")


def canonical_name(name: str) -> str:
    key = _slug(name)
    for known in TARIFF_NAMES:
        if _slug(known) == key or _slug(known.replace(" reference", "")) == key:
            return known
    raise TariffError(f"unknown tariff {name!r}; known: {', '.join(TARIFF_NAMES)}")


def get_tariff(name: str) -> TariffSpec:
    return reference_tariffs()[canonical_name(name)]


# ---------------------------------------------------------------------------
# operations


def build_schedule(
    spec: TariffSpec | str,
    grid: TimeGrid,
    aggregate_load: np.ndarray | None = None,
    prorate_partial_periods: bool = False,
) -> TariffSchedule:
    """Lay a tariff out on a grid.

    Every billing period touched by the grid is charged its full capacity
    rate. With ``prorate_partial_periods`` a period only partly inside the
    grid (a representative week of a month) is charged pro rata instead.
    """
    if isinstance(spec, str):
        spec = get_tariff(spec)
    n = len(grid)
    tax = np.full(n, spec.tax)

    if spec.is_dynamic:
        if aggregate_load is None:
            raise TariffError(f"{spec.name}: dynamic tariff needs an aggregate load curve")
        load = np.asarray(aggregate_load, dtype=float)
        if load.shape != (n,):
            raise TariffError(f"{spec.name}: aggregate load has {load.size} steps, grid has {n}")
        if np.any(load <= 0) or not np.all(np.isfinite(load)):
            raise TariffError(f"{spec.name}: aggregate load must be strictly positive")
        energy = spec.dynamic_median * load / np.median(load)
        grid_cost = energy.copy()
    else:
        energy = np.empty(n)
        grid_cost = np.empty(n)
        month = grid.month
        for season in spec.seasons:
            in_season = np.isin(month, sorted(season.months))
            energy[in_season] = season.offpeak.energy_cost
            grid_cost[in_season] = season.offpeak.grid_cost
            if season.window is not None:
                peak = in_season & season.window.mask(grid)
                energy[peak] = season.peak.energy_cost
                grid_cost[peak] = season.peak.grid_cost

    kwargs = {}
    rule = spec.capacity
    if rule is not None:
        labels, coverage, ids = grid.period_index(rule.horizon)
        if rule.horizon == "monthly":
            months = labels
        else:
            first = np.zeros(len(labels), dtype=int)
            first[ids[::-1]] = np.arange(n)[::-1]
            months = grid.month[first]
        rates = np.array([rule.rate_for_month(int(m)) for m in months])
        weights = coverage if prorate_partial_periods else np.ones(len(labels))
        kwargs = dict(period_labels=labels, period_ids=ids, period_rates=rates, period_weights=weights)

    schedule = TariffSchedule(
        spec.name, grid, energy, grid_cost, tax, spec.export_price, rule, spec.fixed_fee, **kwargs
    )
    for arr in (schedule.energy_cost, schedule.grid_cost, schedule.tax):
        arr.setflags(write=False)
    return schedule


def bill(schedule: TariffSchedule, dispatch) -> BillBreakdown:
    """Evaluate the volumetric and capacity-based charges for one building."""
    imp, exp = _exchange(schedule, dispatch)
    ts = schedule.timestep_hours
    volumetric = float(np.dot(imp, schedule.import_price) * ts)
    grid_vol = float(np.dot(imp, schedule.grid_cost) * ts)
    tax = float(np.dot(imp, schedule.tax) * ts)
    export_credit = float(exp.sum() * schedule.export_price * ts)
    peaks: list = []
    capacity = 0.0
    if schedule.capacity_rule is not None:
        period_max = period_peaks(imp, schedule.period_ids, schedule.n_periods)
        capacity = float(np.dot(period_max, schedule.effective_period_rates))
        peaks = [(int(k), float(p)) for k, p in zip(schedule.period_labels, period_max)]
    return BillBreakdown(
        volumetric_import=volumetric,
        export_credit=export_credit,
        capacity_charge=capacity,
        per_period_peaks=peaks,
        grid_portion=grid_vol + capacity,
        tax_portion=tax,
        fixed_charge=schedule.fixed_charge,
    )


def period_peaks(values: np.ndarray, ids: np.ndarray, n_periods: int) -> np.ndarray:
    out = np.zeros(n_periods)
    np.maximum.at(out, ids, values)
    return out


def grid_revenue(bills: Sequence[BillBreakdown], dispatches: Sequence) -> tuple[float, float]:
    """(total revenue, grid cost recovery) summed over a fleet of buildings."""
    if len(bills) != len(dispatches):
        raise TariffError(f"{len(bills)} bills but {len(dispatches)} dispatches")
    total = sum(b.volumetric_import + b.capacity_charge - b.export_credit for b in bills)
    recovery = sum(b.grid_portion for b in bills)
    return float(total), float(recovery)


def dso_revenue(spec: TariffSpec, grid: TimeGrid, dispatches: Iterable, aggregate_load=None) -> float:
    schedule = build_schedule(spec, grid, aggregate_load)
    return float(sum(bill(schedule, d).dso_revenue for d in dispatches))


@dataclass(frozen=True)
class Calibration:
    spec: TariffSpec
    factor: float | None  # scale applied to the adjustable coefficients
    uniform_rate: float | None = None  # set instead when capacity rates started at zero


def calibrate(
    spec: TariffSpec,
    grid: TimeGrid,
    reference_dispatches: Sequence,
    reference_revenue: float,
    aggregate_load: np.ndarray | None = None,
) -> TariffSpec:
    """Calibrated copy of ``spec``; see :func:`solve_calibration`."""
    return solve_calibration(spec, grid, reference_dispatches, reference_revenue, aggregate_load).spec


def solve_calibration(
    spec: TariffSpec,
    grid: TimeGrid,
    reference_dispatches: Sequence,
    reference_revenue: float,
    aggregate_load: np.ndarray | None = None,
) -> Calibration:
    """Rescale the adjustable coefficients so the fleet revenue hits the target.

    Behaviour is frozen: revenue (taxes excluded) is evaluated on the given
    dispatches, so it is affine in the adjustable coefficients and the scale
    factor has a closed form. Volumetric tariffs adjust energy and grid cost;
    capacity tariffs adjust energy cost and the import power cost. A capacity
    tariff whose capacity rates are all zero instead solves for one uniform
    capacity rate with the energy cost held.
    """
    if reference_revenue <= 0:
        raise TariffError("reference revenue must be positive")
    if not reference_dispatches:
        raise TariffError("calibration needs at least one reference dispatch")
    schedule = build_schedule(spec, grid, aggregate_load)
    ts = grid.step_hours
    adjustable = 0.0
    capacity_base = 0.0
    peak_weight = 0.0
    fixed = 0.0
    for d in reference_dispatches:
        imp, exp = _exchange(schedule, d)
        b = bill(schedule, d)
        fixed += -b.export_credit + b.fixed_charge
        if spec.capacity is None:
            adjustable += float(np.dot(imp, schedule.energy_cost + schedule.grid_cost) * ts)
        else:
            adjustable += float(np.dot(imp, schedule.energy_cost) * ts)
            fixed += float(np.dot(imp, schedule.grid_cost) * ts)
            capacity_base += b.capacity_charge
            peaks = period_peaks(imp, schedule.period_ids, schedule.n_periods)
            peak_weight += float(np.dot(peaks, schedule.period_weights))

    if spec.capacity is not None and capacity_base == 0.0:
        if peak_weight <= 0:
            raise TariffError(f"{spec.name}: no import peaks to carry a capacity charge")
        rate = (reference_revenue - fixed - adjustable) / peak_weight
        if rate < 0:
            raise TariffError(f"{spec.name}: calibration needs a negative capacity rate ({rate:.4g})")
        return Calibration(with_uniform_rate(spec, rate), None, rate)

    base = adjustable + capacity_base
    if base <= 0:
        raise TariffError(f"{spec.name}: adjustable revenue base is zero, nothing to scale")
    factor = (reference_revenue - fixed) / base
    if factor < 0:
        raise TariffError(f"{spec.name}: calibration needs negative rates (factor {factor:.4g})")
    return Calibration(scale_spec(spec, factor), factor)


def with_uniform_rate(spec: TariffSpec, rate: float) -> TariffSpec:
    rule = replace(spec.capacity, rate_by_season={k: rate for k in spec.capacity.rate_by_season})
    return replace(spec, capacity=rule)


def average_calibrations(spec: TariffSpec, results: Sequence[Calibration]) -> TariffSpec:
    """One spec for several networks from the mean of their calibrations."""
    if not results:
        raise TariffError("nothing to average")
    if all(r.factor is not None for r in results):
        return scale_spec(spec, float(np.mean([r.factor for r in results])))
    if all(r.uniform_rate is not None for r in results):
        return with_uniform_rate(spec, float(np.mean([r.uniform_rate for r in results])))
    raise TariffError(f"{spec.name}: cannot average mixed calibration kinds")


def scale_spec(spec: TariffSpec, factor: float) -> TariffSpec:
    """Multiply the calibration-adjustable coefficients by ``factor``."""
    if factor == 1.0:
        return spec
    if spec.is_dynamic:
        return replace(spec, dynamic_median=spec.dynamic_median * factor)
    with_grid = spec.capacity is None

    def scale(p: PriceComponents | None) -> PriceComponents | None:
        if p is None:
            return None
        grid_cost = p.grid_cost * factor if with_grid else p.grid_cost
        return PriceComponents(p.energy_cost * factor, grid_cost, p.tax)

    seasons = tuple(replace(s, offpeak=scale(s.offpeak), peak=scale(s.peak)) for s in spec.seasons)
    capacity = spec.capacity.scaled(factor) if spec.capacity is not None else None
    return replace(spec, seasons=seasons, capacity=capacity)


# ---------------------------------------------------------------------------
# config and CSV


def tariff_from_config(entry: Mapping) -> TariffSpec:
    """Build a spec from a config mapping.

    ``base`` names a preset to start from; the other keys override it::

        name: CT daily (cheap)
        base: CT daily
        energy_ct: 7.5
        capacity_rates: {summer: 0.5, fall_spring: 0.9, winter: 1.3}
        capacity_seasons: {winter: [12, 1, 2], summer: [6, 7, 8], fall_spring: [3, 4, 5, 9, 10, 11]}

    Without ``base``, ``seasons`` lists ``months``, ``offpeak``/``peak`` as
    ``{energy_ct, grid_ct}`` and ``window`` as ``{days, start_hour, end_hour}``.
    """
    entry = dict(entry)
    base_name = entry.pop("base", None)
    name = entry.pop("name", base_name)
    if name is None:
        raise TariffError("tariff entry needs a name or a base")
    if base_name is None and "seasons" not in entry and "dynamic_median_ct" not in entry:
        base_name = name
    spec = get_tariff(base_name) if base_name is not None else TariffSpec(name, dynamic_median=0.0)
    spec = replace(spec, name=name)
    tax = entry.pop("tax_ct", spec.tax * 100) / 100
    updates: dict = {"tax": tax}

    if "seasons" in entry:
        updates["seasons"] = tuple(_season_from_config(s, tax) for s in entry.pop("seasons"))
        updates["dynamic_median"] = None
    energy_ct = entry.pop("energy_ct", None)
    grid_ct = entry.pop("grid_ct", None)
    if energy_ct is not None or grid_ct is not None:
        seasons = updates.get("seasons", spec.seasons)
        updates["seasons"] = tuple(
            replace(
                s,
                offpeak=PriceComponents(
                    s.offpeak.energy_cost if energy_ct is None else energy_ct / 100,
                    s.offpeak.grid_cost if grid_ct is None else grid_ct / 100,
                    tax,
                ),
                peak=None,
                window=None,
            )
            for s in seasons
        )
    if "dynamic_median_ct" in entry:
        updates["dynamic_median"] = entry.pop("dynamic_median_ct") / 100
        updates["seasons"] = ()
    if "export_ct" in entry:
        updates["export_price"] = entry.pop("export_ct") / 100
    if "fixed_fee" in entry:
        updates["fixed_fee"] = float(entry.pop("fixed_fee"))

    rates = entry.pop("capacity_rates", None)
    calendar = entry.pop("capacity_seasons", None)
    horizon = entry.pop("capacity_horizon", None)
    if rates is not None or calendar is not None or horizon is not None:
        old = spec.capacity
        if isinstance(rates, (int, float)):
            rates = {"all": float(rates)}
            calendar = calendar or {"all": list(range(1, 13))}
        cal = (
            {k: frozenset(v) for k, v in calendar.items()}
            if calendar is not None
            else (dict(old.season_calendar) if old else {"all": ALL_MONTHS})
        )
        rate_map = dict(rates) if rates is not None else dict(old.rate_by_season)
        updates["capacity"] = CapacityChargeRule(
            horizon or (old.horizon if old else "monthly"), rate_map, cal
        )
    if entry:
        raise TariffError(f"tariff {name!r}: unknown keys {sorted(entry)}")
    # re-run validation on the merged spec
    return TariffSpec(**{**{f.name: getattr(spec, f.name) for f in dataclasses.fields(spec)}, **updates})


def _season_from_config(s: Mapping, tax: float) -> SeasonRates:
    def prices(p):
        return PriceComponents(p["energy_ct"] / 100, p["grid_ct"] / 100, tax)

    window = None
    if s.get("window") is not None:
        w = s["window"]
        window = PeakWindow(frozenset(w.get("days", WEEKDAYS)), w["start_hour"], w["end_hour"])
    return SeasonRates(
        frozenset(s.get("months", ALL_MONTHS)),
        prices(s["offpeak"]),
        prices(s["peak"]) if s.get("peak") is not None else None,
        window,
    )


BILL_COLUMNS = (
    "building_id", "tariff", "volumetric_import", "export_credit",
    "capacity_charge", "grid_portion", "total",
)


def write_bills_csv(path, rows: Iterable[tuple[str, str, BillBreakdown]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BILL_COLUMNS)
        for building_id, tariff, b in rows:
            writer.writerow(
                [building_id, tariff]
                + [f"{v:.6g}" for v in (b.volumetric_import, b.export_credit,
                                        b.capacity_charge, b.grid_portion, b.total)]
            )


def _exchange(schedule: TariffSchedule, dispatch) -> tuple[np.ndarray, np.ndarray]:
    imp = np.asarray(dispatch.grid_import, dtype=float)
    exp = np.asarray(dispatch.grid_export, dtype=float)
    n = len(schedule.grid)
    if imp.shape != (n,) or exp.shape != (n,):
        raise TariffError(f"dispatch length {imp.size}/{exp.size} does not match schedule length {n}")
    if np.any(imp < 0) or np.any(exp < 0):
        raise TariffError("import and export powers must be >= 0")
    return imp, exp

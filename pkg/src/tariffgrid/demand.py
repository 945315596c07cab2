"""Building load allocation against a transformer measurement.

Stage 1 gives every building a reference profile of its category, scaled to
its estimated annual energy. Stage 2 adjusts the building curves so their sum
matches the transformer curve at every step, with the smallest weighted L1
change.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .timegrid import TimeGrid

CATEGORIES = ("apartment", "house", "non_residential")
ERAS = ("pre_1980", "1980_2000", "post_2000")

# Placeholder electricity intensities in kWh/m2/yr by category and
# construction era. Illustrative values only, not taken from SIA tables.
DEFAULT_COEFFICIENTS: dict[tuple[str, str], float] = {
    ("apartment", "pre_1980"): 32.0,
    ("apartment", "1980_2000"): 28.0,
    ("apartment", "post_2000"): 24.0,
    ("house", "pre_1980"): 38.0,
    ("house", "1980_2000"): 33.0,
    ("house", "post_2000"): 27.0,
    ("non_residential", "pre_1980"): 75.0,
    ("non_residential", "1980_2000"): 65.0,
    ("non_residential", "post_2000"): 55.0,
}

TYPICAL_KWH = {"apartment": 2500.0, "house": 4500.0, "non_residential": 15000.0}


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class BuildingMeta:
    building_id: str
    category: str
    floor_area: float
    construction_era: str = "1980_2000"

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise AllocationError(f"{self.building_id}: unknown category {self.category!r}")
        if self.floor_area <= 0:
            raise AllocationError(f"{self.building_id}: floor area must be > 0")


@dataclass(frozen=True, eq=False)
class ReferenceProfile:
    category: str
    shape: np.ndarray  # sums to 1 over the grid
    source_kwh: float  # annual consumption of the metered customer it came from


@dataclass(frozen=True, eq=False)
class ReferenceLibrary:
    profiles: tuple[ReferenceProfile, ...]

    def __post_init__(self) -> None:
        for i, p in enumerate(self.profiles):
            if np.any(p.shape < 0):
                raise AllocationError(f"reference profile {i} has negative values")
            if abs(p.shape.sum() - 1.0) > 1e-9:
                raise AllocationError(f"reference profile {i} sums to {p.shape.sum()!r}, not 1")
            if p.category not in CATEGORIES:
                raise AllocationError(f"reference profile {i}: unknown category {p.category!r}")

    def of_category(self, category: str) -> list[int]:
        return [i for i, p in enumerate(self.profiles) if p.category == category]


def estimate_annual_energy(
    meta: BuildingMeta, coefficients: Mapping[tuple[str, str], float] = DEFAULT_COEFFICIENTS
) -> float:
    key = (meta.category, meta.construction_era)
    if key not in coefficients:
        raise AllocationError(f"{meta.building_id}: no energy coefficient for {key}")
    energy = meta.floor_area * coefficients[key]
    if not energy > 0:
        raise AllocationError(f"{meta.building_id}: estimated energy must be > 0, got {energy}")
    return float(energy)


def assignment_score(annual_kwh: float, profile: ReferenceProfile) -> float:
    """Mismatch between a building's energy and the metered source of a profile."""
    return abs(np.log(annual_kwh / profile.source_kwh))


def allocate_stage1(
    buildings: Sequence[BuildingMeta],
    energies: Sequence[float],
    library: ReferenceLibrary,
    grid: TimeGrid,
) -> tuple[list[int], np.ndarray]:
    """Pick a same-category profile per building and scale it to the building's energy.

    Returns the chosen library indices and an ``(n_buildings, T)`` array in kW.
    The profile shape is spread over the grid, so the horizon energy equals
    ``annual_kwh * grid.year_fraction``.
    """
    if len(buildings) != len(energies):
        raise AllocationError("one energy estimate per building is required")
    T = len(grid)
    out = np.empty((len(buildings), T))
    chosen = []
    for row, (meta, energy) in enumerate(zip(buildings, energies)):
        if not energy > 0:
            raise AllocationError(f"{meta.building_id}: annual energy must be > 0")
        candidates = library.of_category(meta.category)
        if not candidates:
            raise AllocationError(f"no reference profile for category {meta.category!r}")
        # the score is separable per building, so the per-building argmin is the joint optimum
        best = min(candidates, key=lambda i: (assignment_score(energy, library.profiles[i]), i))
        shape = library.profiles[best].shape
        if len(shape) != T:
            raise AllocationError("reference profiles do not match the grid length")
        chosen.append(best)
        out[row] = energy * grid.year_fraction * shape / grid.step_hours
    return chosen, out


def reconcile_stage2(
    profiles: np.ndarray,
    transformer_load: np.ndarray,
    weights: Sequence[float] | None = None,
) -> np.ndarray:
    """Minimal weighted-L1 adjustment so the building curves sum to the transformer curve.

    Each step is an independent fractional-knapsack problem: the gap is
    carried by the cheapest weight class first. Within a class the change is
    split in proportion to the current values (equal split when they are all
    zero), which is one of the optimal solutions. The default weights are
    ``1 / annual energy``.
    """
    profiles = np.asarray(profiles, dtype=float)
    target = np.asarray(transformer_load, dtype=float)
    if profiles.ndim != 2 or profiles.shape[1] != len(target):
        raise AllocationError("profiles must be (n_buildings, T) on the transformer grid")
    if np.any(target < 0):
        raise AllocationError("transformer load must be >= 0")
    if np.any(profiles < 0):
        raise AllocationError("building profiles must be >= 0")
    n_b = profiles.shape[0]
    if weights is None:
        energy = profiles.sum(axis=1)
        if np.any(energy <= 0):
            raise AllocationError("buildings with zero energy need explicit weights")
        weights = 1.0 / energy
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n_b,) or np.any(weights <= 0):
        raise AllocationError("need one positive weight per building")

    dead = np.flatnonzero((profiles.sum(axis=0) == 0) & (target > 0))
    if dead.size:
        raise AllocationError(
            f"all building profiles are zero where the transformer draws power, steps {dead[:20].tolist()}"
        )

    gap = target - profiles.sum(axis=0)
    adjusted = profiles.copy()
    classes = [np.flatnonzero(weights == w) for w in np.unique(weights)]

    up = gap > 0
    if up.any():
        members = classes[0]
        vals = profiles[np.ix_(members, np.flatnonzero(up))]
        tot = vals.sum(axis=0)
        share = np.where(tot > 0, vals / np.where(tot > 0, tot, 1.0), 1.0 / len(members))
        adjusted[np.ix_(members, np.flatnonzero(up))] += share * gap[up]

    need = np.where(gap < 0, -gap, 0.0)
    for members in classes:
        if not need.any():
            break
        cols = np.flatnonzero(need > 0)
        vals = profiles[np.ix_(members, cols)]
        avail = vals.sum(axis=0)
        take = np.minimum(need[cols], avail)
        frac = np.divide(take, avail, out=np.zeros_like(take), where=avail > 0)
        adjusted[np.ix_(members, cols)] -= vals * frac
        need[cols] -= take
    if np.any(need > 1e-9 * np.maximum(1.0, target)):
        raise AllocationError("transformer curve is below what non-negative profiles can reach")
    np.maximum(adjusted, 0.0, out=adjusted)
    return adjusted


def stage2_objective(profiles: np.ndarray, adjusted: np.ndarray, weights: Sequence[float]) -> float:
    return float(np.sum(np.asarray(weights)[:, None] * np.abs(adjusted - profiles)))


def proportional_scaling(profiles: np.ndarray, transformer_load: np.ndarray) -> np.ndarray:
    """Baseline: scale all buildings by the same factor at every step."""
    total = profiles.sum(axis=0)
    factor = np.divide(transformer_load, total, out=np.ones_like(total), where=total > 0)
    return profiles * factor


# ---------------------------------------------------------------------------
# synthetic data


def _category_base(category: str, grid: TimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Smooth diurnal/weekly/seasonal shape from a few Fourier terms."""
    h = grid.hour
    wd = grid.weekday
    weekend = wd >= 5
    day = 2 * np.pi * h / 24.0
    jitter = rng.normal(0.0, 0.3, 6)
    if category == "non_residential":
        office = np.clip(np.sin(np.pi * (h - 7 + jitter[0]) / 11.0), 0.0, None)
        base = 0.35 + np.where(weekend, 0.15, 1.0) * office
    else:
        evening = np.exp(-0.5 * ((h - 19.5 - jitter[1]) / 1.6) ** 2)
        morning = np.exp(-0.5 * ((h - 7.5 - jitter[2] - 1.5 * weekend) / 1.1) ** 2)
        midday = np.exp(-0.5 * ((h - 12.5) / 1.5) ** 2)
        scale = 1.0 if category == "house" else 0.8
        base = (
            0.3
            + 0.05 * np.cos(day + jitter[3])
            + scale * (1.0 * evening + 0.5 * morning + (0.25 + 0.3 * weekend) * midday)
        )
    winter = 1.0 + (0.25 + 0.05 * jitter[4]) * np.cos(2 * np.pi * (grid.day_of_year - 15) / 365.0)
    return base * winter


def _appliance_spikes(grid: TimeGrid, rng: np.random.Generator, rate_per_day: float, level: float) -> np.ndarray:
    """Short high-power events (cooking, washing) as a Poisson process."""
    T = len(grid)
    spikes = np.zeros(T)
    n_events = rng.poisson(rate_per_day * T * grid.step_hours / 24.0)
    starts = rng.integers(0, T, n_events)
    # events happen mostly when people are awake
    awake = (grid.hour[starts] >= 6.5) & (grid.hour[starts] <= 22.0)
    starts = starts[awake | (rng.random(len(starts)) < 0.1)]
    lengths = rng.integers(1, 4, len(starts))
    mags = level * rng.uniform(0.6, 1.4, len(starts))
    for s, n, m in zip(starts, lengths, mags):
        spikes[s:s + n] += m
    return spikes


def synth_profiles(
    seed: int,
    n_per_category: int,
    grid: TimeGrid,
    transformer_kwh: float | None = None,
) -> tuple[ReferenceLibrary, np.ndarray]:
    """Deterministic synthetic reference library and PV-free transformer curve (kW).

    Each profile is a Fourier-type base shape times multiplicative noise plus
    appliance spikes, normalised to sum to 1 over the grid. The transformer
    curve is the sum of every library customer at its source energy, rescaled
    to ``transformer_kwh`` per year when given.
    """
    if n_per_category < 1:
        raise ValueError("n_per_category must be >= 1")
    rng = np.random.default_rng(seed)
    T = len(grid)
    profiles = []
    transformer = np.zeros(T)
    for category in CATEGORIES:
        for _ in range(n_per_category):
            base = _category_base(category, grid, rng)
            noise = rng.lognormal(0.0, 0.25, T)
            level = 0.5 if category == "non_residential" else 2.5
            rate = 3.0 if category == "non_residential" else 4.0
            raw = base * noise + _appliance_spikes(grid, rng, rate, level) / (1.0 + base.mean())
            shape = raw / raw.sum()
            # normalise twice so the sum is 1 to the last ulp where possible
            shape = shape / shape.sum()
            source = float(TYPICAL_KWH[category] * rng.lognormal(0.0, 0.35))
            profiles.append(ReferenceProfile(category, shape, source))
            transformer += source * grid.year_fraction * shape / grid.step_hours
    if transformer_kwh is not None:
        transformer *= transformer_kwh * grid.year_fraction / (transformer.sum() * grid.step_hours)
    return ReferenceLibrary(tuple(profiles)), transformer


# ---------------------------------------------------------------------------
# CSV interfaces


def read_buildings_csv(path) -> list[BuildingMeta]:
    """Columns ``building_id, category, floor_area_m2, era``."""
    with open(path, newline="") as fh:
        return [
            BuildingMeta(r["building_id"], r["category"], float(r["floor_area_m2"]), r["era"])
            for r in csv.DictReader(fh)
        ]


def write_buildings_csv(path, buildings: Sequence[BuildingMeta]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["building_id", "category", "floor_area_m2", "era"])
        for b in buildings:
            w.writerow([b.building_id, b.category, f"{b.floor_area:.3f}", b.construction_era])


def read_transformer_csv(path, grid: TimeGrid) -> np.ndarray:
    """Columns ``timestamp, kw``; rows matched to the grid by timestamp."""
    values = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            values[np.datetime64(r["timestamp"], "m").tolist()] = float(r["kw"])
    try:
        return np.array([values[s] for s in grid.start.tolist()])
    except KeyError as exc:
        raise AllocationError(f"transformer file {path} has no row for {exc.args[0]}") from None


def write_transformer_csv(path, grid: TimeGrid, kw: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "kw"])
        for stamp, v in zip(grid.start.astype(str), kw):
            w.writerow([stamp, f"{v:.6g}"])


def write_profiles_csv(path, grid: TimeGrid, building_ids: Sequence[str], profiles: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *building_ids])
        for t, stamp in enumerate(grid.start.astype(str)):
            w.writerow([stamp, *(f"{v:.6g}" for v in profiles[:, t])])


def write_library_csv(profiles_path, meta_path, grid: TimeGrid, library: ReferenceLibrary) -> None:
    """Shapes as ``timestamp, p0, p1, ...`` plus ``profile_id, category, source_kwh``."""
    ids = [f"p{i}" for i in range(len(library.profiles))]
    shapes = np.array([p.shape for p in library.profiles])
    with open(profiles_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *ids])
        for t, stamp in enumerate(grid.start.astype(str)):
            w.writerow([stamp, *(f"{v:.9g}" for v in shapes[:, t])])
    with open(meta_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["profile_id", "category", "source_kwh"])
        for pid, p in zip(ids, library.profiles):
            w.writerow([pid, p.category, f"{p.source_kwh:.6f}"])


def read_library_csv(profiles_path, meta_path, grid: TimeGrid) -> ReferenceLibrary:
    """Library on ``grid``, which must cover the year the profiles describe.

    Shapes are renormalised after parsing to absorb rounding in the file.
    """
    with open(meta_path, newline="") as fh:
        meta = [(r["profile_id"], r["category"], float(r["source_kwh"])) for r in csv.DictReader(fh)]
    rows = {}
    with open(profiles_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for r in reader:
            rows[np.datetime64(r[0], "m").tolist()] = r[1:]
    col = {name: i for i, name in enumerate(header[1:])}
    missing = [pid for pid, _, _ in meta if pid not in col]
    if missing:
        raise AllocationError(f"{profiles_path}: no column for profiles {', '.join(missing)}")
    try:
        table = np.array([[float(v) for v in rows[s]] for s in grid.start.tolist()])
    except KeyError as exc:
        raise AllocationError(f"reference profile file {profiles_path} has no row for {exc.args[0]}") from None
    profiles = []
    for pid, category, source in meta:
        shape = table[:, col[pid]]
        profiles.append(ReferenceProfile(category, shape / shape.sum(), source))
    return ReferenceLibrary(tuple(profiles))

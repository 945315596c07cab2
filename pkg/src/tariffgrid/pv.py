"""Rooftop PV generation from horizontal irradiance and roof geometry.

Transposition uses the isotropic-sky model with the Erbs diffuse-fraction
correlation; the electrical side is a plain efficiency model with a NOCT cell
temperature and a linear power temperature coefficient.
"""

from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .timegrid import TimeGrid

SOLAR_CONSTANT = 1367.0
# below this cos(zenith) the beam/diffuse split is unreliable; treat as diffuse
MIN_COS_ZENITH = 0.065

PULLY_LATITUDE = 46.51
PULLY_LONGITUDE = 6.66


@dataclass(frozen=True)
class RoofSegment:
    area: float  # m2
    azimuth: float = 0.0  # degrees from south, east negative
    tilt: float = 30.0  # degrees from horizontal
    packing_density: float = 0.19  # kWp per m2

    def __post_init__(self) -> None:
        if self.area <= 0:
            raise ValueError(f"roof area must be > 0, got {self.area}")
        if not 0 <= self.tilt <= 90:
            raise ValueError(f"tilt must be in [0, 90], got {self.tilt}")
        if not -180 <= self.azimuth <= 180:
            raise ValueError(f"azimuth must be in [-180, 180], got {self.azimuth}")
        if self.packing_density <= 0:
            raise ValueError("packing density must be > 0")

    @property
    def capacity(self) -> float:
        return self.area * self.packing_density


@dataclass(frozen=True, eq=False)
class WeatherYear:
    grid: TimeGrid
    ghi: np.ndarray  # W/m2
    ambient_temp: np.ndarray  # degC
    latitude: float = PULLY_LATITUDE
    longitude: float = PULLY_LONGITUDE
    utc_offset_hours: float = 1.0

    def __post_init__(self) -> None:
        n = len(self.grid)
        if np.shape(self.ghi) != (n,) or np.shape(self.ambient_temp) != (n,):
            raise ValueError("weather series must match the simulation grid")
        if np.any(np.asarray(self.ghi) < 0):
            raise ValueError("GHI must be >= 0")


@dataclass(frozen=True)
class PVParams:
    stc_efficiency_scale: float = 1.0 / 1000.0  # per W/m2
    temp_coefficient: float = -0.0035  # 1/degC
    noct: float = 45.0  # degC
    albedo: float = 0.2
    cap: float = 1.05
    yield_band: tuple[float, float] = (600.0, 1400.0)  # kWh/kWp per full year

    def __post_init__(self) -> None:
        if self.temp_coefficient > 0:
            raise ValueError("temperature coefficient must be <= 0")


def solar_position(grid: TimeGrid, latitude: float, longitude: float, utc_offset_hours: float = 1.0):
    """Zenith and azimuth (radians, azimuth from south, east negative) at interval midpoints."""
    doy = grid.day_of_year + 1
    day_angle = 2 * np.pi * (doy - 1) / 365.0
    decl = (
        0.006918 - 0.399912 * np.cos(day_angle) + 0.070257 * np.sin(day_angle)
        - 0.006758 * np.cos(2 * day_angle) + 0.000907 * np.sin(2 * day_angle)
        - 0.002697 * np.cos(3 * day_angle) + 0.00148 * np.sin(3 * day_angle)
    )
    eot_min = 229.18 * (
        0.000075 + 0.001868 * np.cos(day_angle) - 0.032077 * np.sin(day_angle)
        - 0.014615 * np.cos(2 * day_angle) - 0.040849 * np.sin(2 * day_angle)
    )
    clock = grid.hour + grid.step_hours / 2
    solar_time = clock + (4 * (longitude - 15 * utc_offset_hours) + eot_min) / 60.0
    hour_angle = np.radians(15 * (solar_time - 12))
    lat = np.radians(latitude)
    cos_z = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(hour_angle)
    cos_z = np.clip(cos_z, -1.0, 1.0)
    zenith = np.arccos(cos_z)
    sin_z = np.sin(zenith)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_az = (cos_z * np.sin(lat) - np.sin(decl)) / (sin_z * np.cos(lat))
    azimuth = np.sign(hour_angle) * np.abs(np.arccos(np.clip(np.nan_to_num(cos_az), -1, 1)))
    return zenith, azimuth, decl


def extraterrestrial_horizontal(grid: TimeGrid, cos_zenith: np.ndarray) -> np.ndarray:
    doy = grid.day_of_year + 1
    g0 = SOLAR_CONSTANT * (1 + 0.033 * np.cos(2 * np.pi * doy / 365.0))
    return g0 * np.maximum(cos_zenith, 0.0)


def erbs_diffuse_fraction(kt: np.ndarray) -> np.ndarray:
    kt = np.clip(kt, 0.0, 1.0)
    mid = 0.9511 - 0.1604 * kt + 4.388 * kt**2 - 16.638 * kt**3 + 12.336 * kt**4
    return np.where(kt <= 0.22, 1 - 0.09 * kt, np.where(kt <= 0.8, mid, 0.165))


def incidence_cosine(zenith, sun_azimuth, tilt_deg: float, azimuth_deg: float) -> np.ndarray:
    beta = np.radians(tilt_deg)
    gamma = np.radians(azimuth_deg)
    return np.cos(zenith) * np.cos(beta) + np.sin(zenith) * np.sin(beta) * np.cos(sun_azimuth - gamma)


def transpose_irradiance(weather: WeatherYear, segment: RoofSegment, albedo: float = 0.2) -> np.ndarray:
    """Plane-of-array irradiance (W/m2) on one roof segment."""
    ghi = np.asarray(weather.ghi, dtype=float)
    if segment.tilt == 0:
        return ghi.copy()
    zenith, sun_az, _ = solar_position(
        weather.grid, weather.latitude, weather.longitude, weather.utc_offset_hours
    )
    cos_z = np.cos(zenith)
    sun_up = cos_z >= MIN_COS_ZENITH
    g0 = extraterrestrial_horizontal(weather.grid, cos_z)
    kt = np.divide(ghi, g0, out=np.zeros_like(ghi), where=sun_up)
    kd = np.where(sun_up, erbs_diffuse_fraction(kt), 1.0)
    dhi = kd * ghi
    beam_h = ghi - dhi
    cos_theta = np.maximum(incidence_cosine(zenith, sun_az, segment.tilt, segment.azimuth), 0.0)
    rb = np.divide(cos_theta, cos_z, out=np.zeros_like(cos_z), where=sun_up)
    cos_b = np.cos(np.radians(segment.tilt))
    poa = beam_h * rb + dhi * (1 + cos_b) / 2 + ghi * albedo * (1 - cos_b) / 2
    return np.maximum(poa, 0.0)


def module_output(poa: np.ndarray, ambient_temp: np.ndarray, params: PVParams) -> np.ndarray:
    """Per-kWp DC output for a given plane-of-array irradiance."""
    t_cell = ambient_temp + (params.noct - 20.0) / 800.0 * poa
    out = poa * params.stc_efficiency_scale * (1 + params.temp_coefficient * (t_cell - 25.0))
    return np.clip(out, 0.0, params.cap)


def pv_profile(
    weather: WeatherYear, segments: list[RoofSegment], params: PVParams | None = None
) -> tuple[np.ndarray, float]:
    """Capacity-weighted per-kWp profile over all segments and the roof potential in kWp."""
    if not segments:
        raise ValueError("pv_profile needs at least one roof segment")
    params = params or PVParams()
    caps = np.array([s.capacity for s in segments])
    profile = np.zeros(len(weather.grid))
    for seg, cap in zip(segments, caps):
        poa = transpose_irradiance(weather, seg, params.albedo)
        profile += cap * module_output(poa, weather.ambient_temp, params)
    profile /= caps.sum()
    _check_yield(profile, weather.grid, params)
    return profile, float(caps.sum())


def annual_yield(profile: np.ndarray, grid: TimeGrid) -> float:
    """kWh per kWp, extrapolated to a full year when the grid is shorter."""
    return float(profile.sum() * grid.step_hours / grid.year_fraction)


def _check_yield(profile: np.ndarray, grid: TimeGrid, params: PVParams) -> None:
    y = annual_yield(profile, grid)
    lo, hi = params.yield_band
    if y > 0 and not lo <= y <= hi:
        warnings.warn(f"PV yield {y:.0f} kWh/kWp outside plausibility band [{lo:.0f}, {hi:.0f}]")


def clear_sky_ghi(grid: TimeGrid, latitude: float, longitude: float, utc_offset_hours: float = 1.0) -> np.ndarray:
    """Haurwitz clear-sky GHI in W/m2."""
    zenith, _, _ = solar_position(grid, latitude, longitude, utc_offset_hours)
    cos_z = np.cos(zenith)
    out = np.zeros(len(grid))
    up = cos_z > 0.01
    out[up] = 1098.0 * cos_z[up] * np.exp(-0.057 / cos_z[up])
    return out


def synth_weather(
    grid: TimeGrid,
    seed: int = 0,
    latitude: float = PULLY_LATITUDE,
    longitude: float = PULLY_LONGITUDE,
    mean_clearness: float = 0.6,
    seasonal_amplitude: float = 0.2,
    persistence: float = 0.6,
    spread: float = 0.4,
) -> WeatherYear:
    """Clear-sky irradiance attenuated by a persistent daily cloud factor.

    The daily clearness follows an AR(1) process around a seasonal mean
    (foggy winters, clearer summers), so cloudy spells last several days.
    The wide ``spread`` yields many fully clear and fully overcast days,
    which keeps the beam share (and so the tilt gain) realistic.
    Temperature is a seasonal plus diurnal sinusoid with noise.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    doy = grid.day_of_year
    n_days = int(doy.max()) + 1
    season = np.cos(2 * np.pi * (np.arange(n_days) - 172) / 365.0)  # +1 at midsummer
    day_mean = mean_clearness + seasonal_amplitude * season
    shocks = rng.normal(0.0, 1.0, n_days)
    anomaly = np.empty(n_days)
    anomaly[0] = shocks[0]
    for d in range(1, n_days):
        anomaly[d] = persistence * anomaly[d - 1] + np.sqrt(1 - persistence**2) * shocks[d]
    clearness = np.clip(day_mean + spread * anomaly, 0.08, 1.0)
    ghi = clear_sky_ghi(grid, latitude, longitude) * clearness[doy]
    t_season = 11.0 + 9.0 * season[doy]
    t_diurnal = 4.0 * np.cos(2 * np.pi * (grid.hour - 15.0) / 24.0)
    temp = t_season + t_diurnal + rng.normal(0.0, 1.0, len(grid))
    return WeatherYear(grid, ghi, temp, latitude, longitude)


# ---------------------------------------------------------------------------
# CSV interfaces


def read_weather_csv(path, grid: TimeGrid, latitude=PULLY_LATITUDE, longitude=PULLY_LONGITUDE) -> WeatherYear:
    """Columns ``timestamp, ghi_w_m2, temp_c``; rows are matched to the grid by timestamp."""
    stamps, ghi, temp = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            stamps.append(np.datetime64(row["timestamp"], "m"))
            ghi.append(float(row["ghi_w_m2"]))
            temp.append(float(row["temp_c"]))
    stamps = np.array(stamps, dtype="datetime64[m]")
    index = {s: i for i, s in enumerate(stamps.tolist())}
    try:
        rows = [index[s] for s in grid.start.tolist()]
    except KeyError as exc:
        raise ValueError(f"weather file {path} has no row for {exc.args[0]}") from None
    return WeatherYear(grid, np.array(ghi)[rows], np.array(temp)[rows], latitude, longitude)


def write_weather_csv(path, weather: WeatherYear) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "ghi_w_m2", "temp_c"])
        for stamp, g, t in zip(weather.grid.start.astype(str), weather.ghi, weather.ambient_temp):
            w.writerow([stamp, f"{g:.3f}", f"{t:.3f}"])


def read_roofs_csv(path, packing_density: float = 0.19) -> dict[str, list[RoofSegment]]:
    """Columns ``building_id, segment_id, area_m2, azimuth_deg, tilt_deg``."""
    roofs: dict[str, list[RoofSegment]] = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            roofs[row["building_id"]].append(
                RoofSegment(
                    float(row["area_m2"]), float(row["azimuth_deg"]), float(row["tilt_deg"]),
                    packing_density,
                )
            )
    return dict(roofs)


def write_roofs_csv(path, roofs: dict[str, list[RoofSegment]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["building_id", "segment_id", "area_m2", "azimuth_deg", "tilt_deg"])
        for bid, segs in roofs.items():
            for i, s in enumerate(segs):
                w.writerow([bid, i, f"{s.area:.3f}", f"{s.azimuth:.3f}", f"{s.tilt:.3f}"])

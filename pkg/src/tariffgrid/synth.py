"""Synthetic input data for desk-scale runs.

The confidential smart-meter, weather and network data are replaced by
seeded generators. :func:`write_fixture` lays out a complete scenario
directory (data files, network files and a ``config.yaml``).
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from .demand import (
    BuildingMeta,
    allocate_stage1,
    estimate_annual_energy,
    synth_profiles,
    write_buildings_csv,
    write_library_csv,
    write_transformer_csv,
)
from .powerflow import NETWORK_SHAPES, save_network, synth_network
from .pv import RoofSegment, synth_weather, write_roofs_csv, write_weather_csv
from .timegrid import TimeGrid

# (category, floor area m2, roof area m2) of the eight desk-scale buildings
DESK_FLEET = (
    ("house", 140.0, 80.0),
    ("house", 180.0, 110.0),
    ("house", 120.0, 70.0),
    ("house", 220.0, 135.0),
    ("apartment", 400.0, 90.0),
    ("apartment", 300.0, 70.0),
    ("house", 160.0, 90.0),
    ("non_residential", 600.0, 120.0),
)

# each roof is split into two pitched faces
ROOF_FACES = ((-30.0, 30.0), (60.0, 30.0))  # (azimuth from south, tilt)


def desk_buildings() -> tuple[list[BuildingMeta], dict[str, list[RoofSegment]]]:
    metas, roofs = [], {}
    for i, (category, floor, roof) in enumerate(DESK_FLEET):
        bid = f"b{i}"
        metas.append(BuildingMeta(bid, category, floor, "1980_2000"))
        roofs[bid] = [RoofSegment(roof / len(ROOF_FACES), az, tilt) for az, tilt in ROOF_FACES]
    return metas, roofs


def synth_transformer(metas, library, year_grid: TimeGrid, seed: int, noise: float = 0.03) -> np.ndarray:
    """PV-free transformer curve: the stage-1 fleet sum with multiplicative noise."""
    energies = [estimate_annual_energy(m) for m in metas]
    _, loads = allocate_stage1(metas, energies, library, year_grid)
    rng = np.random.default_rng(seed + 1)
    return loads.sum(axis=0) * rng.lognormal(0.0, noise, len(year_grid))


def default_config(seed: int, days: int | None = None) -> dict:
    horizon = {"days": int(days)} if days else {"representative_weeks": [1, 4, 7, 10]}
    return {
        "seed": int(seed),
        "horizon": horizon,
        "data": {
            "weather": "weather.csv",
            "buildings": "buildings.csv",
            "roofs": "roofs.csv",
            "reference_profiles": "reference_profiles.csv",
            "reference_meta": "reference_meta.csv",
        },
        "networks": [{"file": "network_desk.yaml", "transformer_load": "transformer.csv"}],
        "tariffs": "all",
        "references": ["FT reference", "DT reference"],
        "average_calibration": True,
        "costs": {},
        "battery": {},
        "solver": {"tolerance": 1e-9},
        "powerflow": {"use_virtual_rating": False, "hosting_capacity": False},
    }


def write_fixture(out_dir, seed: int = 7, days: int | None = None, n_per_category: int = 4) -> str:
    """Write the desk-scale scenario into ``out_dir``; returns the config path."""
    os.makedirs(out_dir, exist_ok=True)
    year = TimeGrid.year_grid()
    metas, roofs = desk_buildings()
    weather = synth_weather(year, seed)
    library, _ = synth_profiles(seed, n_per_category, year)
    transformer = synth_transformer(metas, library, year, seed)

    path = lambda name: os.path.join(out_dir, name)  # noqa: E731
    write_weather_csv(path("weather.csv"), weather)
    write_buildings_csv(path("buildings.csv"), metas)
    write_roofs_csv(path("roofs.csv"), roofs)
    write_library_csv(path("reference_profiles.csv"), path("reference_meta.csv"), year, library)
    write_transformer_csv(path("transformer.csv"), year, transformer)

    ids = [m.building_id for m in metas]
    desk = synth_network("rural", ids, seed, n_feeders=2, s_rated=100.0, n_injection_points=len(ids), name="desk")
    save_network(path("network_desk.yaml"), desk)
    # full-size topologies shaped like the studied grids, for standalone power-flow use
    for kind, shape in NETWORK_SHAPES.items():
        n_buildings = shape[4]
        bids = [f"{kind[0]}{i:03d}" for i in range(n_buildings)]
        save_network(path(f"network_{kind}.yaml"), synth_network(kind, bids, seed))

    config_path = path("config.yaml")
    with open(config_path, "w") as fh:
        yaml.safe_dump(default_config(seed, days), fh, sort_keys=False)
    return config_path

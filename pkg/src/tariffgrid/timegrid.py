"""Fixed-step simulation calendar.

All series in the package are plain numpy arrays aligned with a
:class:`TimeGrid`. Timestamps are interval starts in a fixed UTC offset
(no daylight saving), so a full non-leap year at 15 minutes has 35,040 steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

DEFAULT_YEAR = 2025
STEP_HOURS = 0.25


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Interval-start timestamps plus the step length in hours.

    The grid may be non-contiguous (representative days). ``days`` holds the
    0-based day-of-year index of every step.
    """

    start: np.ndarray  # datetime64[m]
    step_hours: float = STEP_HOURS
    year: int = DEFAULT_YEAR
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.start.ndim != 1 or len(self.start) == 0:
            raise ValueError("TimeGrid needs a non-empty 1-D timestamp array")
        if self.step_hours <= 0:
            raise ValueError("step_hours must be positive")

    @classmethod
    def year_grid(cls, year: int = DEFAULT_YEAR, step_hours: float = STEP_HOURS) -> "TimeGrid":
        return cls.from_days(range(_days_in_year(year)), year=year, step_hours=step_hours)

    @classmethod
    def from_days(cls, days, year: int = DEFAULT_YEAR, step_hours: float = STEP_HOURS) -> "TimeGrid":
        """Grid covering whole days given by 0-based day-of-year indices."""
        days = sorted(set(int(d) for d in days))
        n_year = _days_in_year(year)
        if not days or days[0] < 0 or days[-1] >= n_year:
            raise ValueError(f"day indices must lie in [0, {n_year})")
        per_day = round(24 / step_hours)
        if abs(per_day * step_hours - 24) > 1e-9:
            raise ValueError("step_hours must divide 24")
        origin = np.datetime64(f"{year}-01-01T00:00", "m")
        step = np.timedelta64(round(step_hours * 60), "m")
        offsets = np.arange(per_day) * step
        stamps = np.concatenate(
            [origin + np.timedelta64(d, "D") + offsets for d in days]
        )
        return cls(stamps, step_hours=step_hours, year=year)

    @classmethod
    def representative_weeks(
        cls, months=(1, 4, 7, 10), year: int = DEFAULT_YEAR, step_hours: float = STEP_HOURS
    ) -> "TimeGrid":
        """One week starting on the first Monday of each given month."""
        days = []
        for month in months:
            first = datetime(year, month, 1)
            monday = first + timedelta(days=(7 - first.weekday()) % 7)
            doy = (monday - datetime(year, 1, 1)).days
            days.extend(range(doy, doy + 7))
        return cls.from_days(days, year=year, step_hours=step_hours)

    @classmethod
    def first_days(cls, n: int, year: int = DEFAULT_YEAR, step_hours: float = STEP_HOURS) -> "TimeGrid":
        return cls.from_days(range(n), year=year, step_hours=step_hours)

    def __len__(self) -> int:
        return len(self.start)

    def _cached(self, key, fn):
        if key not in self._cache:
            value = fn()
            value.setflags(write=False)
            self._cache[key] = value
        return self._cache[key]

    @property
    def month(self) -> np.ndarray:
        """Month number 1..12 for every step."""
        return self._cached(
            "month", lambda: self.start.astype("datetime64[M]").astype(int) % 12 + 1
        )

    @property
    def day_of_year(self) -> np.ndarray:
        def compute():
            origin = np.datetime64(f"{self.year}-01-01", "D")
            return (self.start.astype("datetime64[D]") - origin).astype(int)

        return self._cached("doy", compute)

    @property
    def weekday(self) -> np.ndarray:
        """Monday = 0 .. Sunday = 6."""
        # 1970-01-01 was a Thursday
        return self._cached(
            "weekday", lambda: (self.start.astype("datetime64[D]").astype(int) + 3) % 7
        )

    @property
    def hour(self) -> np.ndarray:
        """Fractional wall-clock hour of the interval start."""
        def compute():
            minutes = (self.start - self.start.astype("datetime64[D]")).astype(int)
            return minutes / 60.0

        return self._cached("hour", compute)

    @property
    def n_days(self) -> int:
        return len(np.unique(self.day_of_year))

    @property
    def horizon_hours(self) -> float:
        return len(self) * self.step_hours

    @property
    def year_fraction(self) -> float:
        """Share of the calendar year covered by the grid (1.0 for a full year)."""
        return self.horizon_hours / (24.0 * _days_in_year(self.year))

    def period_index(self, horizon: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Billing periods of the grid.

        Returns ``(labels, coverage, ids)``: ``ids[t]`` indexes into ``labels``
        for step ``t`` and ``coverage[k]`` is the fraction of calendar period
        ``k`` present in the grid (1.0 for complete months or days).
        """
        if horizon == "monthly":
            keys = self.month
            present = np.bincount(keys, minlength=13)
            full = np.array(
                [0] + [_days_in_month(self.year, m) * 24 / self.step_hours for m in range(1, 13)]
            )
        elif horizon == "daily":
            keys = self.day_of_year
            present = np.bincount(keys, minlength=_days_in_year(self.year))
            full = np.full(len(present), 24 / self.step_hours)
        else:
            raise ValueError(f"unknown billing horizon {horizon!r}")
        labels, ids = np.unique(keys, return_inverse=True)
        coverage = present[labels] / full[labels]
        return labels, coverage, ids

    def contiguous(self) -> np.ndarray:
        """Boolean per step: True when step t directly follows step t-1."""
        def compute():
            out = np.zeros(len(self), dtype=bool)
            step = np.timedelta64(round(self.step_hours * 60), "m")
            out[1:] = np.diff(self.start) == step
            return out

        return self._cached("contig", compute)

    def as_datetimes(self) -> list[datetime]:
        return self.start.astype("datetime64[m]").astype(datetime).tolist()

    def fingerprint(self) -> str:
        return f"{self.year}:{self.step_hours}:{len(self)}:{self.start[0]}:{self.start[-1]}:{int(self.day_of_year.sum())}"


def _days_in_year(year: int) -> int:
    return 366 if (year % 4 == 0 and year % 100 != 0) or year % 400 == 0 else 365


def _days_in_month(year: int, month: int) -> int:
    nxt = datetime(year + (month == 12), month % 12 + 1, 1)
    return (nxt - datetime(year, month, 1)).days

"""Year-indexed series with unit tags.

Every quantity in the model (capacity, loadings, masses, prices) is an
:class:`AnnualSeries`: a start year plus one value per calendar year.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GW = "GW"
GW_PER_YR = "GW/yr"
T = "t"
T_PER_YR = "t/yr"
KG_PER_GW = "kg/GW"
EUR_PER_KG = "EUR/kg"
FRACTION = "fraction"
DISSOLUTION = "mg/cm2/h"
T_PGM = "t PGM"

UNITS = frozenset(
    {GW, GW_PER_YR, T, T_PER_YR, KG_PER_GW, EUR_PER_KG, FRACTION, DISSOLUTION, T_PGM}
)

# flow unit -> stock unit, used by cumulative()
_STOCK_UNIT = {T_PER_YR: T, GW_PER_YR: GW}


class SeriesError(ValueError):
    """Invalid series construction or incompatible series arithmetic."""


@dataclass(frozen=True)
class AnnualSeries:
    start_year: int
    values: np.ndarray
    unit: str
    _years: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size == 0:
            raise SeriesError("series must hold at least one value")
        if not np.all(np.isfinite(vals)):
            raise SeriesError("series values must be finite")
        if self.unit not in UNITS:
            raise SeriesError(f"unknown unit tag {self.unit!r}")
        vals.setflags(write=False)
        years = np.arange(int(self.start_year), int(self.start_year) + vals.size)
        years.setflags(write=False)
        object.__setattr__(self, "start_year", int(self.start_year))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_years", years)

    @property
    def years(self) -> np.ndarray:
        return self._years

    @property
    def end_year(self) -> int:
        return self.start_year + len(self.values) - 1

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, year: int) -> float:
        return self.at(year)

    def at(self, year: int) -> float:
        i = int(year) - self.start_year
        if i < 0 or i >= len(self.values):
            raise KeyError(f"year {year} outside {self.start_year}-{self.end_year}")
        return float(self.values[i])

    def window(self, first: int, last: int) -> "AnnualSeries":
        """Sub-series covering ``first..last`` inclusive."""
        if first < self.start_year or last > self.end_year or last < first:
            raise SeriesError(
                f"window {first}-{last} not inside {self.start_year}-{self.end_year}"
            )
        i0 = first - self.start_year
        return AnnualSeries(first, self.values[i0 : i0 + last - first + 1], self.unit)

    def total(self) -> float:
        return float(math.fsum(self.values))

    def __neg__(self) -> "AnnualSeries":
        return AnnualSeries(self.start_year, -self.values, self.unit)

    def __add__(self, other: "AnnualSeries") -> "AnnualSeries":
        return combine(self, other, "add")

    def __sub__(self, other: "AnnualSeries") -> "AnnualSeries":
        return combine(self, other, "sub")

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnualSeries):
            return NotImplemented
        return (
            self.start_year == other.start_year
            and self.unit == other.unit
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "start_year": self.start_year,
            "unit": self.unit,
            "values": [float(v) for v in self.values],
        }


def make_series(start_year: int, values: Sequence[float], unit: str) -> AnnualSeries:
    return AnnualSeries(start_year, values, unit)


def constant(value: float, first: int, last: int, unit: str) -> AnnualSeries:
    return AnnualSeries(first, np.full(last - first + 1, float(value)), unit)


def _overlap(a: AnnualSeries, b: AnnualSeries) -> tuple[int, int]:
    first = max(a.start_year, b.start_year)
    last = min(a.end_year, b.end_year)
    if last < first:
        raise SeriesError(
            f"no overlapping years: {a.start_year}-{a.end_year} vs {b.start_year}-{b.end_year}"
        )
    return first, last


def combine(a: AnnualSeries, b: AnnualSeries, op: str) -> AnnualSeries:
    """Element-wise ``add``/``sub`` over the intersection of the year ranges."""
    if a.unit != b.unit:
        raise SeriesError(f"unit mismatch: {a.unit!r} vs {b.unit!r}")
    first, last = _overlap(a, b)
    x = a.window(first, last).values
    y = b.window(first, last).values
    if op == "add":
        out = x + y
    elif op == "sub":
        out = x - y
    else:
        raise SeriesError(f"unsupported op {op!r}")
    return AnnualSeries(first, out, a.unit)


def scale(a: AnnualSeries, factor, unit: str | None = None) -> AnnualSeries:
    """Multiply by a scalar or a dimensionless series; optionally retag the unit."""
    if isinstance(factor, AnnualSeries):
        if factor.unit != FRACTION:
            raise SeriesError("can only scale by a dimensionless series")
        first, last = _overlap(a, factor)
        vals = a.window(first, last).values * factor.window(first, last).values
        return AnnualSeries(first, vals, unit or a.unit)
    return AnnualSeries(a.start_year, a.values * float(factor), unit or a.unit)


def cumulative(a: AnnualSeries) -> AnnualSeries:
    """Running sum; flow units become the matching stock unit."""
    return AnnualSeries(a.start_year, np.cumsum(a.values), _STOCK_UNIT.get(a.unit, a.unit))


def interpolate_linear(
    anchors: Iterable[tuple[int, float]], first: int, last: int, unit: str
) -> AnnualSeries:
    """Piecewise-linear values at each integer year in ``first..last``.

    Years outside the anchor span continue the slope of the nearest segment.
    Anchor years get the anchor value exactly.
    """
    pts = sorted((int(y), float(v)) for y, v in anchors)
    if len(pts) < 2:
        raise SeriesError("need at least two anchors")
    ys = [p[0] for p in pts]
    if len(set(ys)) != len(ys):
        raise SeriesError("duplicate anchor years")
    exact = dict(pts)
    out = []
    for year in range(first, last + 1):
        if year in exact:
            out.append(exact[year])
            continue
        j = int(np.searchsorted(ys, year))
        j = min(max(j, 1), len(pts) - 1)
        (y0, v0), (y1, v1) = pts[j - 1], pts[j]
        out.append(v0 + (v1 - v0) * (year - y0) / (y1 - y0))
    return AnnualSeries(first, out, unit)


def to_csv(a: AnnualSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "value", "unit"])
    for year, v in zip(a.years, a.values):
        w.writerow([int(year), format(float(v), ".17g"), a.unit])
    return buf.getvalue()


def from_csv(text: str) -> AnnualSeries:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise SeriesError("empty series CSV")
    units = {r["unit"] for r in rows}
    if len(units) != 1:
        raise SeriesError(f"mixed units in CSV: {sorted(units)}")
    years = [int(r["year"]) for r in rows]
    if years != list(range(years[0], years[0] + len(years))):
        raise SeriesError("CSV years must be contiguous and ascending")
    return AnnualSeries(years[0], [float(r["value"]) for r in rows], units.pop())


def to_json(a: AnnualSeries) -> str:
    # repr() of a Python float is the shortest round-tripping form
    items = [{"year": int(y), "value": float(v)} for y, v in zip(a.years, a.values)]
    return json.dumps(items)


def from_json(text: str, unit: str) -> AnnualSeries:
    items = json.loads(text)
    if not items:
        raise SeriesError("empty series JSON")
    years = [int(it["year"]) for it in items]
    if years != list(range(years[0], years[0] + len(years))):
        raise SeriesError("JSON years must be contiguous and ascending")
    return AnnualSeries(years[0], [float(it["value"]) for it in items], unit)

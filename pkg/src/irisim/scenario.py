"""Exogenous inputs of a run: capacity pathways, loading and recycling curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .series import (
    FRACTION,
    GW,
    GW_PER_YR,
    KG_PER_GW,
    AnnualSeries,
    SeriesError,
    interpolate_linear,
)

PATHWAY_LABELS = ("BAU", "IEA-NZE", "custom")
EXTRAPOLATIONS = ("cumulative-linear", "additions-linear")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class CapacityPathway:
    cumulative: AnnualSeries
    additions: AnnualSeries
    label: str = "custom"

    def __post_init__(self):
        if self.label not in PATHWAY_LABELS:
            raise ScenarioError(f"unknown pathway label {self.label!r}")
        if self.cumulative.unit != GW or self.additions.unit != GW_PER_YR:
            raise ScenarioError("pathway needs cumulative in GW and additions in GW/yr")
        if np.any(np.diff(self.cumulative.values) < 0):
            raise ScenarioError("cumulative capacity must be non-decreasing")
        if np.any(self.additions.values < 0):
            raise ScenarioError("capacity additions must be non-negative")

    @classmethod
    def from_cumulative(cls, cumulative: AnnualSeries, label: str = "custom") -> "CapacityPathway":
        c = cumulative.values
        add = np.concatenate(([c[0]], np.diff(c)))
        return cls(cumulative, AnnualSeries(cumulative.start_year, add, GW_PER_YR), label)

    @classmethod
    def from_additions(cls, additions: AnnualSeries, label: str = "custom") -> "CapacityPathway":
        cum = AnnualSeries(additions.start_year, np.cumsum(additions.values), GW)
        return cls(cum, additions, label)

    def window(self, first: int, last: int) -> "CapacityPathway":
        """Restrict to a horizon; capacity installed before ``first`` counts as year-one additions."""
        cum = self.cumulative.window(first, last)
        return CapacityPathway.from_cumulative(cum, self.label)


def _check_anchor_years(anchors) -> list[tuple[int, float]]:
    pts = sorted((int(y), float(v)) for y, v in anchors)
    ys = [p[0] for p in pts]
    if len(set(ys)) != len(ys):
        raise ScenarioError("duplicate anchor years")
    return pts


def build_bau(
    db_anchors: Sequence[tuple[int, float]],
    end_value: float = 489.0,
    end_year: int = 2050,
    start_year: int | None = None,
    extrapolation: str = "cumulative-linear",
) -> CapacityPathway:
    """Business-as-usual pathway: project-database anchors, then a linear extension.

    ``extrapolation="cumulative-linear"`` draws a straight line in cumulative
    capacity from the last anchor to ``(end_year, end_value)``, i.e. constant
    annual additions. ``"additions-linear"`` instead lets the annual additions
    grow linearly from their last database value so that the cumulative still
    lands exactly on ``end_value``.
    """
    if extrapolation not in EXTRAPOLATIONS:
        raise ScenarioError(f"unknown extrapolation {extrapolation!r}")
    pts = _check_anchor_years(db_anchors)
    if len(pts) < 2:
        raise ScenarioError("need at least two database anchors")
    last_year, last_value = pts[-1]
    if end_year <= last_year:
        raise ScenarioError("end_year must lie after the last database anchor")
    if end_value < last_value:
        raise ScenarioError(
            f"end value {end_value} below last anchor value {last_value}"
        )
    first = pts[0][0] if start_year is None else int(start_year)
    db = interpolate_linear(pts, first, last_year, GW).values
    if extrapolation == "cumulative-linear":
        tail = interpolate_linear([(last_year, last_value), (end_year, end_value)],
                                  last_year + 1, end_year, GW).values
    else:
        n = end_year - last_year
        a_last = db[-1] - db[-2] if len(db) > 1 else db[-1]
        slope = (end_value - last_value - n * a_last) / (n * (n + 1) / 2)
        if a_last + n * slope < 0:
            raise ScenarioError("additions-linear extension would need negative additions")
        adds = a_last + slope * np.arange(1, n + 1)
        tail = last_value + np.cumsum(adds)
        tail[-1] = end_value
    cum = AnnualSeries(first, np.concatenate((db, tail)), GW)
    return CapacityPathway.from_cumulative(cum, "BAU")


def build_nze(
    total_market_anchors: Sequence[tuple[int, float]],
    pemel_share: float = 0.40,
    start_year: int | None = None,
    end_year: int | None = None,
) -> CapacityPathway:
    """Net-zero pathway: PEM share of an interpolated total electrolyser market."""
    if not 0 < pemel_share <= 1:
        raise ScenarioError("pemel_share must lie in (0, 1]")
    pts = _check_anchor_years(total_market_anchors)
    if len(pts) < 2:
        raise ScenarioError("need at least two market anchors")
    if any(b[1] < a[1] for a, b in zip(pts, pts[1:])):
        raise ScenarioError("total-market anchors must be non-decreasing")
    first = pts[0][0] if start_year is None else int(start_year)
    last = pts[-1][0] if end_year is None else int(end_year)
    total = interpolate_linear(pts, first, last, GW)
    cum = AnnualSeries(first, pemel_share * total.values, GW)
    return CapacityPathway.from_cumulative(cum, "IEA-NZE")


@dataclass(frozen=True)
class OmegaTrajectory:
    """Iridium loading per installed capacity, decaying exponentially to a floor (kg/GW)."""

    omega_start: float
    omega_floor: float
    decay_rate: float
    start_year: int = 2024

    def __post_init__(self):
        if not self.omega_floor > 0:
            raise ScenarioError("omega_floor must be positive")
        if self.omega_start < self.omega_floor:
            raise ScenarioError("omega_start must be >= omega_floor")
        if self.decay_rate < 0:
            raise ScenarioError("decay_rate must be >= 0")


def omega_at(traj: OmegaTrajectory, year: float) -> float:
    dt = year - traj.start_year
    if dt < 0:
        raise ScenarioError(f"year {year} before trajectory start {traj.start_year}")
    return traj.omega_floor + (traj.omega_start - traj.omega_floor) * math.exp(-traj.decay_rate * dt)


def omega_series(traj: OmegaTrajectory, first: int, last: int) -> AnnualSeries:
    return AnnualSeries(first, [omega_at(traj, y) for y in range(first, last + 1)], KG_PER_GW)


@dataclass(frozen=True)
class RecyclingRamp:
    """Recycling efficiency rising linearly to ``gamma_end`` at ``ramp_end_year``."""

    gamma_start: float
    gamma_end: float
    ramp_end_year: int
    start_year: int = 2024

    def __post_init__(self):
        # closed-loop limits 0 and 1 are allowed for analytic checks
        if not 0 <= self.gamma_start <= self.gamma_end <= 1:
            raise ScenarioError("need 0 <= gamma_start <= gamma_end <= 1")
        if self.ramp_end_year < self.start_year:
            raise ScenarioError("ramp_end_year before ramp start")

    @classmethod
    def constant(cls, gamma: float, start_year: int = 2024) -> "RecyclingRamp":
        return cls(gamma, gamma, start_year, start_year)


def gamma_at(ramp: RecyclingRamp, year: int) -> float:
    if year >= ramp.ramp_end_year:
        return ramp.gamma_end
    if year <= ramp.start_year:
        return ramp.gamma_start
    frac = (year - ramp.start_year) / (ramp.ramp_end_year - ramp.start_year)
    return ramp.gamma_start + (ramp.gamma_end - ramp.gamma_start) * frac


def gamma_series(ramp: RecyclingRamp, first: int, last: int) -> AnnualSeries:
    return AnnualSeries(first, [gamma_at(ramp, y) for y in range(first, last + 1)], FRACTION)


@dataclass(frozen=True)
class Scenario:
    pathway: CapacityPathway
    omega: OmegaTrajectory
    gamma: RecyclingRamp
    tau_mean: float = 10.0
    unit_size: float = 1.0  # MW per physical unit
    horizon: tuple[int, int] = (2024, 2050)
    seed: int = 0
    mc_subsample: int = 1
    recycling_lag: int = 0
    name: str = "scenario"

    def __post_init__(self):
        if not 1 <= self.tau_mean <= 40:
            raise ScenarioError("tau_mean must lie in [1, 40]")
        if not self.unit_size > 0:
            raise ScenarioError("unit_size must be positive")
        if int(self.mc_subsample) < 1:
            raise ScenarioError("mc_subsample must be >= 1")
        if self.recycling_lag < 0:
            raise ScenarioError("recycling_lag must be >= 0")
        first, last = self.horizon
        object.__setattr__(self, "horizon", (int(first), int(last)))
        if last < first:
            raise ScenarioError("horizon end before start")
        cum = self.pathway.cumulative
        if first < cum.start_year or last > cum.end_year:
            raise ScenarioError(
                f"horizon {first}-{last} not covered by pathway {cum.start_year}-{cum.end_year}"
            )
        if first < self.omega.start_year:
            raise ScenarioError("horizon starts before the omega trajectory")

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.horizon[0], self.horizon[1] + 1)

    def additions(self) -> AnnualSeries:
        return self.pathway.window(*self.horizon).additions

    def omega_values(self) -> AnnualSeries:
        return omega_series(self.omega, *self.horizon)

    def gamma_values(self) -> AnnualSeries:
        return gamma_series(self.gamma, *self.horizon)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


__all__ = [
    "CapacityPathway",
    "OmegaTrajectory",
    "RecyclingRamp",
    "Scenario",
    "ScenarioError",
    "SeriesError",
    "build_bau",
    "build_nze",
    "gamma_at",
    "gamma_series",
    "omega_at",
    "omega_series",
]

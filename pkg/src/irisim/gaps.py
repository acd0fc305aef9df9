"""Supply-demand gaps, stockpiles, sensitivity sweeps and derived metrics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fleet import LifetimeDistribution, lifetime_pmf, simulate
from .scenario import OmegaTrajectory, RecyclingRamp, Scenario, gamma_series, omega_series
from .series import (
    DISSOLUTION,
    GW,
    GW_PER_YR,
    KG_PER_GW,
    T,
    T_PER_YR,
    T_PGM,
    AnnualSeries,
    SeriesError,
    combine,
)

PCT_DEFINITIONS = ("net", "gross", "horizon")


@dataclass(frozen=True)
class GapSegment:
    start_year: int
    end_year: int
    kind: str  # "shortfall" | "surplus"
    integral: float

    def to_dict(self) -> dict:
        return {"start_year": self.start_year, "end_year": self.end_year,
                "kind": self.kind, "integral_t": self.integral}


@dataclass(frozen=True)
class GapReport:
    gap: AnnualSeries
    segments: list
    stockpile: AnnualSeries
    total_shortfall: float
    total_surplus: float
    required_supply_increase_pct: float
    required_supply_increase_pct_net: float
    required_supply_increase_pct_gross: float
    required_supply_increase_pct_horizon: float
    initial_stock: float
    definition: str = "net"
    segment_supply_increase: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return float(np.min(self.stockpile.values)) >= 0.0

    def to_dict(self) -> dict:
        return {
            "first_year": self.gap.start_year,
            "last_year": self.gap.end_year,
            "initial_stock_t": self.initial_stock,
            "total_shortfall_t": self.total_shortfall,
            "total_surplus_t": self.total_surplus,
            "net_gap_t": self.total_shortfall - self.total_surplus,
            "required_supply_increase_pct": self.required_supply_increase_pct,
            "required_supply_increase_definition": self.definition,
            "required_supply_increase_pct_net": self.required_supply_increase_pct_net,
            "required_supply_increase_pct_gross": self.required_supply_increase_pct_gross,
            "required_supply_increase_pct_horizon": self.required_supply_increase_pct_horizon,
            "feasible": self.feasible,
            "min_stockpile_t": float(np.min(self.stockpile.values)),
            "final_stockpile_t": float(self.stockpile.values[-1]),
            "segments": [
                dict(s.to_dict(), supply_increase_pct=pct)
                for s, pct in zip(self.segments, self.segment_supply_increase)
            ],
            "gap_t_per_yr": [float(v) for v in self.gap.values],
        }


def _segments(gap: np.ndarray, first_year: int) -> list[GapSegment]:
    segs = []
    sign = np.sign(gap)
    i, n = 0, len(gap)
    while i < n:
        if sign[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < n and sign[j + 1] == sign[i]:
            j += 1
        kind = "shortfall" if sign[i] > 0 else "surplus"
        segs.append(GapSegment(first_year + i, first_year + j, kind,
                               math.fsum(abs(gap[i:j + 1]))))
        i = j + 1
    return segs


def analyze_gap(
    demand: AnnualSeries,
    supply: AnnualSeries,
    initial_stock: float = 1.0,
    primary: float | AnnualSeries = 7.5,
    definition: str = "net",
) -> GapReport:
    """Signed gap (demand - supply), its red/green segments and the stockpile path.

    ``required_supply_increase_pct`` divides the shortfall by the baseline
    primary supply summed over the shortfall years. ``definition="net"``
    nets surpluses against shortfalls first; ``"gross"`` does not;
    ``"horizon"`` spreads the gross shortfall over every year of the horizon.
    All three are fractions and are always reported.
    """
    if definition not in PCT_DEFINITIONS:
        raise ValueError(f"definition must be one of {', '.join(PCT_DEFINITIONS)}")
    gap = combine(demand, supply, "sub")
    g = gap.values
    first = gap.start_year
    shortfall = math.fsum(g[g > 0])
    surplus = math.fsum(-g[g < 0])
    stock = initial_stock - np.cumsum(g)

    if isinstance(primary, AnnualSeries):
        base = primary.window(first, gap.end_year).values
    else:
        base = np.full(len(g), float(primary))
    base_sum = math.fsum(base[g > 0])
    gross = shortfall / base_sum if base_sum > 0 else 0.0
    net = max(shortfall - surplus, 0.0) / base_sum if base_sum > 0 else 0.0
    horizon = shortfall / math.fsum(base) if math.fsum(base) > 0 else 0.0
    pct = {"net": net, "gross": gross, "horizon": horizon}

    segs = _segments(g, first)
    seg_pct = []
    for s in segs:
        b = math.fsum(base[s.start_year - first : s.end_year - first + 1])
        seg_pct.append(s.integral / b if (s.kind == "shortfall" and b > 0) else 0.0)

    return GapReport(
        gap=gap,
        segments=segs,
        stockpile=AnnualSeries(first, stock, T),
        total_shortfall=shortfall,
        total_surplus=surplus,
        required_supply_increase_pct=pct[definition],
        required_supply_increase_pct_net=net,
        required_supply_increase_pct_gross=gross,
        required_supply_increase_pct_horizon=horizon,
        initial_stock=float(initial_stock),
        definition=definition,
        segment_supply_increase=seg_pct,
    )


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    values: list
    cumulative_demand: list
    minimizer: object
    series: list = field(default_factory=list)  # per-value m_total series

    def to_rows(self) -> list[tuple]:
        return list(zip(self.values, self.cumulative_demand))


def _run_cumulative(args):
    scenario, engine = args
    bd = simulate(scenario, engine)
    return math.fsum(bd.m_total.values), bd.m_total


def _fan_out(scenarios, engine, workers):
    jobs = [(s, engine) for s in scenarios]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cumulative, jobs))  # map keeps input order
    return [_run_cumulative(j) for j in jobs]


def _argmin_first(vals) -> int:
    best = 0
    for i, v in enumerate(vals):
        if v < vals[best]:
            best = i
    return best


def sweep_tau(
    base: Scenario,
    taus: Sequence[float] = tuple(range(5, 21)),
    engine: str = "expected",
    workers: int | None = None,
) -> SweepResult:
    """Cumulative primary demand for each mean lifetime; ties go to the smaller tau."""
    taus = list(taus)
    if not taus:
        raise ValueError("empty tau list")
    if any(not 1 <= t <= 40 for t in taus):
        raise ValueError("taus must lie in [1, 40]")
    order = sorted(range(len(taus)), key=lambda i: taus[i])
    taus = [taus[i] for i in order]
    out = _fan_out([base.with_(tau_mean=t) for t in taus], engine, workers)
    cums = [c for c, _ in out]
    return SweepResult("tau", taus, cums, taus[_argmin_first(cums)], [s for _, s in out])


def sweep_gamma(
    base: Scenario,
    ramps: Sequence[RecyclingRamp],
    engine: str = "expected",
    workers: int | None = None,
) -> SweepResult:
    """Cumulative primary demand per recycling ramp; ties go to the earlier ramp."""
    ramps = list(ramps)
    if not ramps:
        raise ValueError("empty ramp list")
    out = _fan_out([base.with_(gamma=r) for r in ramps], engine, workers)
    cums = [c for c, _ in out]
    return SweepResult("gamma", ramps, cums, ramps[_argmin_first(cums)], [s for _, s in out])


def pgm_required(extra_iridium, ir_fraction: float = 0.02):
    """PGM output needed to yield ``extra_iridium`` at the given iridium share."""
    if not 0 < ir_fraction < 1:
        raise ValueError("ir_fraction must lie in (0, 1)")
    if isinstance(extra_iridium, AnnualSeries):
        return AnnualSeries(extra_iridium.start_year, extra_iridium.values / ir_fraction, T_PGM)
    return float(extra_iridium) / ir_fraction


@dataclass(frozen=True)
class CapacityLimit:
    cumulative: AnnualSeries  # GW operating
    additions: AnnualSeries  # GW/yr new expansion
    available: AnnualSeries  # t/yr supply + recycled returns
    allocated: AnnualSeries  # t/yr spent on replacements + expansion
    unreplaced: AnnualSeries  # GW/yr retirements that could not be replaced


def max_capacity_path(
    supply: AnnualSeries,
    omega: OmegaTrajectory,
    base: Scenario,
) -> CapacityLimit:
    """Largest fleet the supply can build, allocating greedily year by year.

    Each year the supply plus recycled iridium from the constrained fleet's
    own retirements first re-equips retiring capacity; what is left, divided
    by the current loading, becomes new capacity. Retirements follow the
    expected lifetime distribution of ``base``.
    """
    if np.any(supply.values < 0):
        raise SeriesError("supply must be non-negative")
    first, last = supply.start_year, supply.end_year
    w = omega_series(omega, first, last).values / 1000.0  # t/GW
    gam = gamma_series(base.gamma, first, last).values
    pmf = lifetime_pmf(LifetimeDistribution.for_mean(base.tau_mean))
    ks = np.array(sorted(pmf))
    p = np.array([pmf[k] for k in ks])
    n = len(supply)
    lag = int(base.recycling_lag)

    retiring = np.zeros(n)
    retiring_mass = np.zeros(n)
    adds = np.zeros(n)
    avail = np.zeros(n)
    spent = np.zeros(n)
    lost = np.zeros(n)
    operating = np.zeros(n)
    fleet = 0.0
    for i in range(n):
        returned = retiring_mass[i - lag] if i - lag >= 0 else 0.0
        avail[i] = supply.values[i] + gam[i] * returned
        repl_cost = retiring[i] * w[i]
        if repl_cost <= avail[i]:
            replaced = retiring[i]
        else:
            replaced = avail[i] / w[i]
        lost[i] = retiring[i] - replaced
        remaining = avail[i] - replaced * w[i]
        adds[i] = max(remaining, 0.0) / w[i]
        spent[i] = replaced * w[i] + adds[i] * w[i]
        fleet += adds[i] - lost[i]
        operating[i] = fleet
        installed = replaced + adds[i]
        tgt = i + ks
        ok = tgt < n
        retiring[tgt[ok]] += installed * p[ok]
        retiring_mass[tgt[ok]] += installed * w[i] * p[ok]

    return CapacityLimit(
        cumulative=AnnualSeries(first, operating, GW),
        additions=AnnualSeries(first, adds, GW_PER_YR),
        available=AnnualSeries(first, avail, T_PER_YR),
        allocated=AnnualSeries(first, spent, T_PER_YR),
        unreplaced=AnnualSeries(first, lost, GW_PER_YR),
    )


def required_dissolution_rate(
    omega: AnnualSeries,
    tau: float,
    power_density_w_per_cm2: float = 3.0,
    capacity_factor: float = 0.9,
    operating_hours_per_year: float | None = None,
    consumable_fraction: float = 1.0,
) -> AnnualSeries:
    """Anode dissolution rate (mg cm^-2 h^-1) that exhausts the loading in ``tau`` years.

    Areal loading is omega [mg/W] times the stack power density [W/cm2].
    Operating hours default to 8760 h times the capacity factor.
    """
    if omega.unit != KG_PER_GW:
        raise SeriesError("omega must be given in kg/GW")
    hours = 8760.0 * capacity_factor if operating_hours_per_year is None else operating_hours_per_year
    for name, v in (("tau", tau), ("power_density", power_density_w_per_cm2),
                    ("operating_hours", hours), ("consumable_fraction", consumable_fraction)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    loading = omega.values * 1e-3 * power_density_w_per_cm2  # kg/GW == 1e-3 mg/W
    return AnnualSeries(omega.start_year, consumable_fraction * loading / (tau * hours), DISSOLUTION)

"""Recursive cohort simulation of installations, end-of-life replacement and recycling.

Two engines share one discrete lifetime distribution:

* :func:`simulate_fleet_mc` installs individual units, draws a lifetime for
  each and replaces them when they retire.
* :func:`simulate_fleet_expected` propagates expected retirements through the
  renewal recursion (convolution of installs with the lifetime PMF).

Masses are reported in metric tons of iridium per year.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import norm

from .scenario import Scenario
from .series import GW, T_PER_YR, AnnualSeries

RNG_ALGORITHM = "numpy.random.PCG64 (SeedSequence-seeded)"


class RoundingWarning(UserWarning):
    """Unit rounding swallowed a nonzero capacity addition."""


@dataclass(frozen=True)
class LifetimeDistribution:
    """Normal lifetime truncated to ``[lower, upper]`` and binned to whole years."""

    mean: float
    sigma: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        # lower == mean only for tau = 1, which the bounds [1, 2*tau] force
        if not (self.lower <= self.mean < self.upper):
            raise ValueError("need lower <= mean < upper")
        if self.lower < 1:
            raise ValueError("lifetimes shorter than one year are not representable")

    @classmethod
    def for_mean(cls, tau: float) -> "LifetimeDistribution":
        return cls(mean=float(tau), sigma=tau / 3.0, lower=1.0, upper=2.0 * tau)


def _pmf_arrays(dist: LifetimeDistribution) -> tuple[np.ndarray, np.ndarray]:
    k_min = math.floor(dist.lower - 0.5) + 1
    k_max = math.ceil(dist.upper + 0.5) - 1
    ks = np.arange(k_min, k_max + 1)
    lo = np.maximum(ks - 0.5, dist.lower)
    hi = np.minimum(ks + 0.5, dist.upper)
    # survival-function differences keep precision in the upper tail
    z_lo = (lo - dist.mean) / dist.sigma
    z_hi = (hi - dist.mean) / dist.sigma
    mass = np.where(
        z_lo > 0,
        norm.sf(z_lo) - norm.sf(z_hi),
        norm.cdf(z_hi) - norm.cdf(z_lo),
    )
    keep = mass > 0
    ks, mass = ks[keep], mass[keep]
    return ks, mass / math.fsum(mass)


def lifetime_pmf(dist: LifetimeDistribution) -> dict[int, float]:
    ks, p = _pmf_arrays(dist)
    return {int(k): float(v) for k, v in zip(ks, p)}


def pmf_mean(pmf: Mapping[int, float]) -> float:
    return math.fsum(k * p for k, p in pmf.items())


def _normalize_pmf(pmf: Mapping[int, float]) -> tuple[np.ndarray, np.ndarray]:
    ks = np.array(sorted(pmf), dtype=int)
    if ks.size == 0 or ks[0] < 1:
        raise ValueError("lifetime PMF needs support on integers >= 1")
    p = np.array([pmf[int(k)] for k in ks], dtype=float)
    if np.any(p < 0):
        raise ValueError("negative probability in lifetime PMF")
    return ks, p / math.fsum(p)


class LifetimeSampler:
    """Inverse-CDF sampler over a discrete lifetime PMF."""

    def __init__(self, pmf: Mapping[int, float]):
        self.ks, self.p = _normalize_pmf(pmf)
        cdf = np.cumsum(self.p)
        cdf[-1] = 1.0
        self.cdf = cdf

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        return self.ks[np.searchsorted(self.cdf, u, side="right")]


def sample_lifetime(dist: LifetimeDistribution, rng: np.random.Generator) -> int:
    return int(LifetimeSampler(lifetime_pmf(dist)).draw(rng, 1)[0])


@dataclass(frozen=True)
class DemandBreakdown:
    m_cap: AnnualSeries
    m_eol: AnnualSeries
    m_recycling: AnnualSeries
    m_total: AnnualSeries
    surplus_recycled: AnnualSeries
    operating_capacity: AnnualSeries
    retired_capacity: AnnualSeries
    meta: dict = field(default_factory=dict, compare=False)

    COLUMNS = (
        "year", "m_cap", "m_eol", "m_recycling", "m_total",
        "surplus_recycled", "operating_capacity_gw",
    )

    @property
    def years(self) -> np.ndarray:
        return self.m_total.years

    def mass_balance_residual(self) -> float:
        """Relative residual of  sum(cap + eol) + sum(surplus) == sum(total) + sum(recycled)."""
        lhs = math.fsum(self.m_cap.values) + math.fsum(self.m_eol.values) + math.fsum(
            self.surplus_recycled.values)
        rhs = math.fsum(self.m_total.values) + math.fsum(self.m_recycling.values)
        return abs(lhs - rhs) / max(abs(lhs), 1e-300)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        cols = (self.m_cap, self.m_eol, self.m_recycling, self.m_total,
                self.surplus_recycled, self.operating_capacity)
        for i, year in enumerate(self.years):
            w.writerow([int(year)] + [format(float(c.values[i]), ".17g") for c in cols])
        return buf.getvalue()


def _scenario_pmf(scenario: Scenario, pmf: Mapping[int, float] | None):
    if pmf is None:
        pmf = lifetime_pmf(LifetimeDistribution.for_mean(scenario.tau_mean))
    return _normalize_pmf(pmf)


def _check_horizon(scenario: Scenario) -> None:
    first, last = scenario.horizon
    if last - first + 1 < 2:
        raise ValueError("horizon must span at least two years")


def _finish(scenario, cap, eol, recovered, operating, retired, meta) -> DemandBreakdown:
    first = scenario.horizon[0]
    net = cap + eol - recovered
    total = np.maximum(net, 0.0)
    surplus = np.maximum(-net, 0.0)

    def s(v, unit=T_PER_YR):
        return AnnualSeries(first, v, unit)

    return DemandBreakdown(
        m_cap=s(cap), m_eol=s(eol), m_recycling=s(recovered), m_total=s(total),
        surplus_recycled=s(surplus), operating_capacity=s(operating, GW),
        retired_capacity=s(retired, "GW/yr"), meta=meta,
    )


def _recovered(scenario: Scenario, retired_mass: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    lag = int(scenario.recycling_lag)
    credited = np.zeros_like(retired_mass)
    if lag < len(retired_mass):
        credited[lag:] = retired_mass[: len(retired_mass) - lag]
    return gamma * credited


def simulate_fleet_expected(
    scenario: Scenario, pmf: Mapping[int, float] | None = None
) -> DemandBreakdown:
    """Expected-value engine: renewal recursion over the lifetime PMF, no randomness.

    ``pmf`` overrides the scenario's lifetime distribution, e.g. ``{tau: 1.0}``
    for a fixed lifetime.
    """
    _check_horizon(scenario)
    ks, p = _scenario_pmf(scenario, pmf)
    adds = scenario.additions().values  # GW/yr
    omega = scenario.omega_values().values / 1000.0  # t per GW
    gamma = scenario.gamma_values().values
    n = len(adds)

    retired = np.zeros(n)
    retired_mass = np.zeros(n)
    replaced = np.zeros(n)
    for i in range(n):
        replaced[i] = retired[i]
        installed = adds[i] + replaced[i]
        if installed == 0.0:
            continue
        targets = i + ks
        ok = targets < n
        retired[targets[ok]] += installed * p[ok]
        retired_mass[targets[ok]] += installed * omega[i] * p[ok]

    cap = adds * omega
    eol = replaced * omega
    recovered = _recovered(scenario, retired_mass, gamma)
    meta = {"engine": "expected", "tau_mean": scenario.tau_mean}
    return _finish(scenario, cap, eol, recovered, np.cumsum(adds), retired, meta)


def simulate_fleet_mc(
    scenario: Scenario,
    pmf: Mapping[int, float] | None = None,
    seed: int | None = None,
) -> DemandBreakdown:
    """Monte Carlo engine: one draw per simulated unit.

    Each simulated unit stands for ``mc_subsample`` physical units of
    ``unit_size`` MW. Fractional-unit residuals carry over to the next year.
    Output is bit-identical for a given scenario and seed.
    """
    _check_horizon(scenario)
    ks, p = _scenario_pmf(scenario, pmf)
    sampler = LifetimeSampler(dict(zip(ks.tolist(), p.tolist())))
    seed = scenario.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))

    adds_mw = scenario.additions().values * 1000.0
    omega = scenario.omega_values().values / 1000.0  # t per GW
    gamma = scenario.gamma_values().values
    unit_gw = scenario.unit_size * scenario.mc_subsample / 1000.0
    unit_mw = unit_gw * 1000.0
    n = len(adds_mw)
    horizon_k = int(ks[-1]) + 1

    new_units = np.zeros(n, dtype=np.int64)
    retiring = np.zeros(n, dtype=np.int64)
    retired_mass = np.zeros(n)
    carry = 0.0
    swallowed = []
    total_units = 0
    for i in range(n):
        target = adds_mw[i] + carry
        k_new = int(math.floor(target / unit_mw + 1e-9))
        carry = target - k_new * unit_mw
        if adds_mw[i] > 0 and k_new == 0:
            swallowed.append((int(scenario.years[i]), carry))
        new_units[i] = k_new
        n_install = k_new + int(retiring[i])
        total_units += n_install
        if n_install == 0:
            continue
        lifetimes = sampler.draw(rng, n_install)
        counts = np.bincount(lifetimes, minlength=horizon_k)
        for k in np.nonzero(counts)[0]:
            j = i + int(k)
            if j < n:
                retiring[j] += counts[k]
                retired_mass[j] += counts[k] * unit_gw * omega[i]

    if swallowed:
        warnings.warn(
            "unit rounding produced zero installs in years with nonzero additions: "
            + ", ".join(f"{y} (residual {r:.3f} MW)" for y, r in swallowed),
            RoundingWarning,
            stacklevel=2,
        )

    cap = new_units * unit_gw * omega
    eol = retiring * unit_gw * omega
    recovered = _recovered(scenario, retired_mass * 1.0, gamma)
    operating = np.cumsum(new_units) * unit_gw
    meta = {
        "engine": "mc",
        "seed": int(seed),
        "rng_algorithm": RNG_ALGORITHM,
        "simulated_units": int(total_units),
        "mc_subsample": int(scenario.mc_subsample),
        "rounding_residual_mw": float(carry),
        "tau_mean": scenario.tau_mean,
    }
    return _finish(scenario, cap, eol, recovered, operating, retiring * unit_gw, meta)


def simulate(scenario: Scenario, engine: str = "expected", **kw) -> DemandBreakdown:
    if engine == "expected":
        return simulate_fleet_expected(scenario, **kw)
    if engine == "mc":
        return simulate_fleet_mc(scenario, **kw)
    raise ValueError(f"unknown engine {engine!r}")


def mc_replicates(scenario: Scenario, replicates: int = 8, seed: int | None = None) -> np.ndarray:
    """m_total of independent MC runs, one row per replicate.

    Replicate seeds are spawned from one SeedSequence, so the whole set is
    reproducible from ``seed`` (default: the scenario seed).
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    root = np.random.SeedSequence(scenario.seed if seed is None else seed)
    seeds = [int(c.generate_state(1, np.uint64)[0]) for c in root.spawn(replicates)]
    return np.array([simulate_fleet_mc(scenario, seed=s).m_total.values for s in seeds])


def mc_standard_error(scenario: Scenario, replicates: int = 8, seed: int | None = None) -> np.ndarray:
    """Per-year standard deviation of a single MC run's m_total, from independent replicates."""
    return mc_replicates(scenario, replicates, seed).std(axis=0, ddof=1)


def mc_estimate(scenario: Scenario, replicates: int = 20, seed: int | None = None):
    """Monte Carlo estimate of m_total and its standard error (mean of replicates, s / sqrt(R))."""
    runs = mc_replicates(scenario, replicates, seed)
    return runs.mean(axis=0), runs.std(axis=0, ddof=1) / math.sqrt(replicates)

"""Iridium demand and supply simulation for PEM electrolyzer deployment pathways."""

from .fleet import DemandBreakdown, simulate, simulate_fleet_expected, simulate_fleet_mc
from .gaps import GapReport, analyze_gap, sweep_gamma, sweep_tau
from .scenario import OmegaTrajectory, RecyclingRamp, Scenario, build_bau, build_nze
from .series import AnnualSeries, make_series
from .supply import project_supply

__version__ = "0.1.0"

__all__ = [
    "AnnualSeries",
    "DemandBreakdown",
    "GapReport",
    "OmegaTrajectory",
    "RecyclingRamp",
    "Scenario",
    "analyze_gap",
    "build_bau",
    "build_nze",
    "make_series",
    "project_supply",
    "simulate",
    "simulate_fleet_expected",
    "simulate_fleet_mc",
    "sweep_gamma",
    "sweep_tau",
]

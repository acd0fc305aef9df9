"""Scenario x supply matrix runs and reproducible result bundles."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, LoadedScenario, load_scenario, loads_toml
from .fleet import RNG_ALGORITHM, DemandBreakdown, simulate
from .gaps import (
    PCT_DEFINITIONS,
    analyze_gap,
    max_capacity_path,
    pgm_required,
    required_dissolution_rate,
    sweep_gamma,
    sweep_tau,
)
from .scenario import RecyclingRamp, omega_series
from .supply import SUPPLY_METHOD, VARIANT_PHI, SupplyProjection, load_history, project_supply

MATRIX_KEYS = {"history", "initial_stock_t", "primary_t", "supply_variants", "taus",
               "gamma_sweep_ends", "tau_panel", "early_years", "dissolution_taus",
               "pct_definition", "workers", "run"}
RUN_KEYS = {"id", "config", "engine", "seed"}


def fmt(x) -> str:
    """Locale-independent round-trip float formatting used for every CSV cell."""
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else (str(c) if isinstance(c, int) else fmt(c))
                    for c in row])
    return buf.getvalue()


def utc_timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp so whole bundles can be compared byte for byte
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (datetime.fromtimestamp(int(epoch), timezone.utc) if epoch
            else datetime.now(timezone.utc))
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RunManifest:
    scenario_id: str
    engine: str
    seed: int
    config_digest: str
    tool_version: str
    rng_algorithm: str
    timestamp: str

    @classmethod
    def for_run(cls, scenario_id: str, loaded: LoadedScenario, engine: str, seed: int,
                extra_inputs=()) -> "RunManifest":
        h = hashlib.sha256(loaded.digest().encode())
        for p in extra_inputs:
            h.update(Path(p).name.encode())
            h.update(Path(p).read_bytes())
        return cls(scenario_id, engine, int(seed), h.hexdigest(), __version__,
                   RNG_ALGORITHM, utc_timestamp())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class MatrixError(ValueError):
    """Invalid matrix manifest."""


@dataclass(frozen=True)
class MatrixSpec:
    base_dir: Path
    history: Path
    runs: list
    initial_stock: float = 1.0
    primary: float = 7.5
    variants: tuple = ("strong", "weak")
    taus: tuple = tuple(range(5, 21))
    gamma_ends: tuple = (0.70, 0.80, 0.90, 0.97)
    tau_panel: tuple = (5, 10, 15, 20)
    early_years: int = 9
    dissolution_taus: tuple = (10, 14)
    pct_definition: str = "net"
    workers: int | None = None


def load_matrix(path: str | Path) -> MatrixSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: matrix manifest not found")
    try:
        doc = loads_toml(path.read_text())
    except Exception as exc:  # tomli raises its own decode error type
        raise ConfigError(f"{path}: {exc}") from None
    unknown = sorted(set(doc) - MATRIX_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown key '{unknown[0]}'")
    runs = doc.get("run", [])
    if not runs:
        raise MatrixError(f"{path}: matrix manifest lists no runs")
    base = path.parent
    parsed = []
    seen = set()
    for n, r in enumerate(runs, start=1):
        bad = sorted(set(r) - RUN_KEYS)
        if bad:
            raise ConfigError(f"{path}: run #{n}: unknown key '{bad[0]}'")
        for key in ("id", "config"):
            if key not in r:
                raise ConfigError(f"{path}: run #{n}: missing key '{key}'")
        if r["id"] in seen:
            raise ConfigError(f"{path}: run #{n}: duplicate id {r['id']!r}")
        seen.add(r["id"])
        engine = r.get("engine", "expected")
        if engine not in ("expected", "mc"):
            raise ConfigError(f"{path}: run #{n}: engine must be expected or mc")
        cfg = base / r["config"]
        if not cfg.exists():
            raise ConfigError(f"{path}: run #{n}: config {cfg} not found")
        parsed.append({"id": str(r["id"]), "config": cfg, "engine": engine, "seed": r.get("seed")})
    history = base / doc.get("history", "history.csv")
    if not history.exists():
        raise ConfigError(f"{path}: history file {history} not found")
    variants = tuple(doc.get("supply_variants", ("strong", "weak")))
    if not variants or any(v not in VARIANT_PHI for v in variants):
        raise ConfigError(f"{path}: supply_variants must be drawn from {sorted(VARIANT_PHI)}")
    definition = doc.get("pct_definition", "net")
    if definition not in PCT_DEFINITIONS:
        raise ConfigError(f"{path}: pct_definition must be one of {', '.join(PCT_DEFINITIONS)}")
    return MatrixSpec(
        base_dir=base, history=history, runs=parsed,
        initial_stock=float(doc.get("initial_stock_t", 1.0)),
        primary=float(doc.get("primary_t", 7.5)),
        variants=variants,
        taus=tuple(doc.get("taus", range(5, 21))),
        gamma_ends=tuple(float(g) for g in doc.get("gamma_sweep_ends", (0.70, 0.80, 0.90, 0.97))),
        tau_panel=tuple(doc.get("tau_panel", (5, 10, 15, 20))),
        early_years=int(doc.get("early_years", 9)),
        dissolution_taus=tuple(doc.get("dissolution_taus", (10, 14))),
        pct_definition=definition,
        workers=doc.get("workers"),
    )


def demand_supply_rows(bd: DemandBreakdown, supplies: dict[str, SupplyProjection]):
    for i, y in enumerate(bd.years):
        yield [int(y), bd.m_cap.values[i], bd.m_eol.values[i], bd.m_recycling.values[i],
               bd.m_total.values[i]] + [supplies[v].available_for_pemel[int(y)] for v in supplies]


def gap_rows(report):
    for y, g in zip(report.gap.years, report.gap.values):
        yield [int(y), g, max(g, 0.0), max(-g, 0.0), report.stockpile[int(y)]]


def _cell_files(matrix: MatrixSpec, run: dict, supplies: dict) -> tuple[dict, dict]:
    """All output files of one scenario cell, as {relative path: text}, plus a summary."""
    loaded = load_scenario(run["config"])
    sc = loaded.scenario
    seed = sc.seed if run["seed"] is None else int(run["seed"])
    sc = sc.with_(seed=seed)
    engine = run["engine"]
    rid = run["id"]
    files = {}
    kw = {"seed": seed} if engine == "mc" else {}
    bd = simulate(sc, engine, **kw)
    manifest = RunManifest.for_run(rid, loaded, engine, seed, [matrix.history])
    files[f"{rid}/run_manifest.json"] = manifest.to_json()
    files[f"{rid}/demand_breakdown.csv"] = bd.to_csv()

    summary = {"scenario_id": rid, "engine": engine, "cumulative_demand_t": sum(bd.m_total.values),
               "gaps": {}}
    variants = list(supplies)
    files[f"{rid}/fig_a_demand_supply.csv"] = csv_text(
        ["year", "m_cap", "m_eol", "m_recycling", "m_total"] + [f"supply_{v}" for v in variants],
        demand_supply_rows(bd, supplies))
    for panel, v in zip("bc", variants):
        rep = analyze_gap(bd.m_total, supplies[v].available_for_pemel, matrix.initial_stock,
                          matrix.primary, matrix.pct_definition)
        files[f"{rid}/{v}/gap_report.json"] = json.dumps(
            dict(rep.to_dict(), scenario_id=rid, supply_variant=v), indent=2, sort_keys=True) + "\n"
        files[f"{rid}/{v}/stockpile.csv"] = csv_text(
            ["year", "stockpile_t"], ((int(y), s) for y, s in zip(rep.stockpile.years, rep.stockpile.values)))
        files[f"{rid}/fig_{panel}_gap_{v}.csv"] = csv_text(
            ["year", "gap_t", "shortfall_t", "surplus_t", "stockpile_t"], gap_rows(rep))
        summary["gaps"][v] = {"total_shortfall_t": rep.total_shortfall,
                              "total_surplus_t": rep.total_surplus,
                              "required_supply_increase_pct": rep.required_supply_increase_pct,
                              "feasible": rep.feasible}
    # variants beyond the first two still get reports, just no figure panel
    for v in variants[2:]:
        rep = analyze_gap(bd.m_total, supplies[v].available_for_pemel, matrix.initial_stock,
                          matrix.primary, matrix.pct_definition)
        files[f"{rid}/{v}/gap_report.json"] = json.dumps(
            dict(rep.to_dict(), scenario_id=rid, supply_variant=v), indent=2, sort_keys=True) + "\n"

    g = sc.gamma
    ramps = [RecyclingRamp(min(g.gamma_start, e), e, g.ramp_end_year, g.start_year)
             for e in matrix.gamma_ends]
    gs = sweep_gamma(sc, ramps, "expected", matrix.workers)
    files[f"{rid}/sweep_gamma.csv"] = csv_text(
        ["gamma_start", "gamma_end", "ramp_end_year", "cumulative_demand_t"],
        ([r.gamma_start, r.gamma_end, r.ramp_end_year, c] for r, c in zip(gs.values, gs.cumulative_demand)))
    files[f"{rid}/fig_d_gamma_variants.csv"] = csv_text(
        ["year"] + [f"gamma_end_{fmt(e)}" for e in matrix.gamma_ends],
        ([int(y)] + [s.values[i] for s in gs.series] for i, y in enumerate(bd.years)))

    taus = sorted(set(matrix.taus) | set(matrix.tau_panel))
    ts = sweep_tau(sc, taus, "expected", matrix.workers)
    files[f"{rid}/sweep_tau.csv"] = csv_text(
        ["tau", "cumulative_demand_t"],
        ([t, c] for t, c in zip(ts.values, ts.cumulative_demand) if t in matrix.taus))
    by_tau = dict(zip(ts.values, ts.series))
    n_early = min(matrix.early_years, len(bd.years))
    files[f"{rid}/fig_e_tau_early.csv"] = csv_text(
        ["year"] + [f"tau_{fmt(t)}" for t in matrix.tau_panel],
        ([int(bd.years[i])] + [by_tau[t].values[i] for t in matrix.tau_panel] for i in range(n_early)))
    in_sweep = [(t, c) for t, c in zip(ts.values, ts.cumulative_demand) if t in matrix.taus]
    files[f"{rid}/fig_f_tau_cumulative.csv"] = csv_text(["tau", "cumulative_demand_t"], in_sweep)
    best = min(in_sweep, key=lambda tc: tc[1])  # min keeps the first (smallest tau) on ties
    summary["tau_minimizer"] = best[0]
    summary["gamma_sweep_cumulative_t"] = dict(zip((fmt(e) for e in matrix.gamma_ends), gs.cumulative_demand))
    summary["_scenario"] = sc
    return files, summary


def _derived_files(matrix: MatrixSpec, cells: list, supplies: dict) -> dict:
    files = {}
    years = next(iter(supplies.values())).available_for_pemel.years
    # extra PGM output required to close each scenario's shortfall
    cols, series = [], []
    for cell in cells:
        sc = cell["_scenario"]
        bd = simulate(sc, "expected")
        for v, sp in supplies.items():
            gap = analyze_gap(bd.m_total, sp.available_for_pemel, matrix.initial_stock, matrix.primary).gap
            short = gap.values.clip(min=0)
            cols.append(f"{cell['scenario_id']}_{v}")
            series.append(pgm_required(type(gap)(gap.start_year, short, gap.unit)).values)
    files["derived/pgm_increase.csv"] = csv_text(
        ["year"] + [f"{c}_t_pgm" for c in cols],
        ([int(y)] + [s[i] for s in series] for i, y in enumerate(years)))

    # one capacity limit and dissolution panel per distinct loading trajectory
    seen = {}
    for cell in cells:
        sc = cell["_scenario"]
        seen.setdefault(sc.omega, (cell["scenario_id"], sc))
    cols, series = [], []
    for om, (rid, sc) in seen.items():
        for v, sp in supplies.items():
            lim = max_capacity_path(sp.available_for_pemel, om, sc)
            cols.append(f"{rid}_{v}_gw")
            series.append(lim.cumulative.values)
    files["derived/max_capacity.csv"] = csv_text(
        ["year"] + cols, ([int(y)] + [s[i] for s in series] for i, y in enumerate(years)))
    cols, series = [], []
    for om, (rid, sc) in seen.items():
        oms = omega_series(om, int(years[0]), int(years[-1]))
        for t in matrix.dissolution_taus:
            cols.append(f"{rid}_tau_{t}_mg_cm2_h")
            series.append(required_dissolution_rate(oms, t).values)
    files["derived/dissolution_rate.csv"] = csv_text(
        ["year"] + cols, ([int(y)] + [s[i] for s in series] for i, y in enumerate(years)))
    return files


def build_matrix(matrix: MatrixSpec) -> tuple[dict, dict]:
    """Compute every output in memory; nothing touches the output directory."""
    histories = load_history(matrix.history.read_text())
    supplies = {v: project_supply(histories, v, primary=matrix.primary) for v in matrix.variants}
    files = {f"supply/{v}_supply.csv": sp.to_csv() for v, sp in supplies.items()}
    cells = []
    for run in matrix.runs:
        cell_files, summary = _cell_files(matrix, run, supplies)
        files.update(cell_files)
        cells.append(summary)
    files.update(_derived_files(matrix, cells, supplies))
    for c in cells:
        del c["_scenario"]
    summary = {"tool_version": __version__, "supply_method": SUPPLY_METHOD, "cells": cells,
               "files": {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(files.items())}}
    return files, summary


def write_bundle(files: dict, summary: dict, out_dir: str | Path) -> Path:
    """Write into a scratch directory, then move into place so failures leave nothing behind."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".irisim-", dir=out.parent))
    try:
        for rel, text in sorted(files.items()):
            p = tmp / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text, newline="\n")
        (tmp / "matrix_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def run_matrix(config_dir: str | Path, out_dir: str | Path, manifest: str = "matrix.toml") -> dict:
    """Run every cell listed in ``config_dir/manifest`` and write the bundle to ``out_dir``."""
    matrix = load_matrix(Path(config_dir) / manifest)
    files, summary = build_matrix(matrix)
    write_bundle(files, summary, out_dir)
    return summary

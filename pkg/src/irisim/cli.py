"""Command line interface: ``irisim <command> [options]``.

Exit codes: 0 success, 1 invalid input (config, data or arguments), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, default_config_dir, load_scenario
from .fleet import RNG_ALGORITHM, simulate
from .gaps import (
    PCT_DEFINITIONS,
    analyze_gap,
    max_capacity_path,
    pgm_required,
    required_dissolution_rate,
    sweep_gamma,
    sweep_tau,
)
from .runner import MatrixError, RunManifest, csv_text, fmt, run_matrix
from .scenario import RecyclingRamp, ScenarioError, omega_series
from .series import T_PER_YR, AnnualSeries, SeriesError
from .supply import SUPPLY_METHOD, SupplyError, load_history, project_supply, validate_history

log = logging.getLogger("irisim")

VALIDATION_ERRORS = (ConfigError, MatrixError, ScenarioError, SeriesError, SupplyError)

# columns tried, in order, when a CSV is read as a t/yr series
SERIES_COLUMNS = ("m_total", "available_pemel_t", "value", "gap_t")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def read_series(path: str | Path) -> AnnualSeries:
    """Read a t/yr series from any CSV this tool writes (or a plain year,value file)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    col = next((c for c in SERIES_COLUMNS if c in rows[0]), None)
    if col is None or "year" not in rows[0]:
        raise ConfigError(f"{path}: line 1: need a year column and one of {', '.join(SERIES_COLUMNS)}")
    years, vals = [], []
    for n, r in enumerate(rows, start=2):
        try:
            years.append(int(r["year"]))
            vals.append(float(r[col]))
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: line {n}: column {col}: cannot parse {r.get(col)!r}") from None
    if years != list(range(years[0], years[0] + len(years))):
        raise ConfigError(f"{path}: years are not contiguous")
    return AnnualSeries(years[0], vals, T_PER_YR)


def resolve_scenario(name: str, config_dir: Path) -> Path:
    p = Path(name)
    if p.exists():
        return p
    for cand in (config_dir / "scenarios" / f"{name}.toml", config_dir / f"{name}.toml",
                 config_dir / name):
        if cand.exists():
            return cand
    raise ConfigError(f"scenario {name!r} not found (looked in {config_dir})")


def series_table(columns: dict, fmt_: str) -> tuple[str, str]:
    """Render aligned columns as CSV or JSON; returns (text, file suffix)."""
    if fmt_ == "json":
        doc = {k: [int(v) if k == "year" else float(v) for v in vals] for k, vals in columns.items()}
        return json.dumps(doc, indent=2) + "\n", "json"
    keys = list(columns)
    rows = ([int(columns[k][i]) if k == "year" else columns[k][i] for k in keys]
            for i in range(len(columns[keys[0]])))
    return csv_text(keys, rows), "csv"


def write(out: Path, name: str, text: str, quiet: bool) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text, newline="\n")
    if not quiet:
        print(p)
    return p


# --- commands -----------------------------------------------------------------

def cmd_scenario_validate(args) -> int:
    bad = 0
    for name in args.configs:
        try:
            loaded = load_scenario(resolve_scenario(name, args.config_dir))
        except VALIDATION_ERRORS as exc:
            print(f"INVALID {name}: {exc}", file=sys.stderr)
            bad += 1
            continue
        if not args.quiet:
            print(f"ok {name} {loaded.digest()}")
    return 1 if bad else 0


def cmd_simulate(args) -> int:
    path = resolve_scenario(args.scenario, args.config_dir)
    loaded = load_scenario(path)
    sc = loaded.scenario
    seed = sc.seed if args.seed is None else args.seed
    sc = sc.with_(seed=seed)
    if args.subsample:
        sc = sc.with_(mc_subsample=args.subsample)
    kw = {"seed": seed} if args.engine == "mc" else {}
    bd = simulate(sc, args.engine, **kw)
    if args.format == "json":
        cols = {"year": bd.years}
        cols.update({c: getattr(bd, c if c != "operating_capacity_gw" else "operating_capacity").values
                     for c in bd.COLUMNS[1:]})
        text, suffix = series_table(cols, "json")
    else:
        text, suffix = bd.to_csv(), "csv"
    write(args.out, f"demand_breakdown.{suffix}", text, args.quiet)
    manifest = RunManifest.for_run(sc.name, loaded, args.engine, seed)
    meta = dict(json.loads(manifest.to_json()), engine_meta=bd.meta,
                mass_balance_residual=bd.mass_balance_residual())
    write(args.out, "run_meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n", args.quiet)
    return 0


def cmd_supply(args) -> int:
    history = Path(args.history) if args.history else args.config_dir / "history.csv"
    if not history.exists():
        raise ConfigError(f"{history}: file not found")
    sp = project_supply(load_history(history.read_text()), args.variant,
                        tuple(args.horizon), args.primary)
    if args.format == "json":
        cols = {"year": sp.primary.years, "primary_t": sp.primary.values}
        cols.update({f"{s}_t": v.values for s, v in sp.sector_forecasts.items()})
        cols["available_pemel_t"] = sp.available_for_pemel.values
        cols["price_forecast"] = sp.price_forecast.values
        text, suffix = series_table(cols, "json")
    else:
        text, suffix = sp.to_csv(), "csv"
    write(args.out, f"supply_{args.variant}.{suffix}", text, args.quiet)
    if not args.quiet:
        print(f"note: {SUPPLY_METHOD}", file=sys.stderr)
    return 0


def cmd_validate_history(args) -> int:
    path = Path(args.history)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    errors = validate_history(path.read_text())
    for e in errors:
        print(f"{path}: {e}", file=sys.stderr)
    if not errors and not args.quiet:
        print(f"ok {path}")
    return 1 if errors else 0


def cmd_gaps(args) -> int:
    demand, supply = read_series(args.demand), read_series(args.supply)
    rep = analyze_gap(demand, supply, args.stock0, args.primary, args.definition)
    write(args.out, "gap_report.json", json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n",
          args.quiet)
    text, suffix = series_table({"year": rep.stockpile.years, "stockpile_t": rep.stockpile.values},
                                args.format)
    write(args.out, f"stockpile.{suffix}", text, args.quiet)
    return 0


def cmd_sweep(args) -> int:
    sc = load_scenario(resolve_scenario(args.scenario, args.config_dir)).scenario
    if args.seed is not None:
        sc = sc.with_(seed=args.seed)
    if args.param == "tau":
        res = sweep_tau(sc, args.values or list(range(5, 21)), args.engine, args.workers)
        header, rows = ["tau", "cumulative_demand_t"], list(res.to_rows())
    else:
        g = sc.gamma
        ends = args.values or [0.70, 0.80, 0.90, 0.97]
        ramp_end = args.ramp_end_year or g.ramp_end_year
        ramps = [RecyclingRamp(min(g.gamma_start, e), e, ramp_end, g.start_year) for e in ends]
        res = sweep_gamma(sc, ramps, args.engine, args.workers)
        header = ["gamma_start", "gamma_end", "ramp_end_year", "cumulative_demand_t"]
        rows = [[r.gamma_start, r.gamma_end, r.ramp_end_year, c]
                for r, c in zip(res.values, res.cumulative_demand)]
    if args.format == "json":
        text = json.dumps({"parameter": args.param, "columns": header, "rows": rows,
                           "minimizer": res.minimizer if args.param == "tau" else
                           res.minimizer.gamma_end}, indent=2) + "\n"
        write(args.out, "sweep.json", text, args.quiet)
    else:
        write(args.out, "sweep.csv", csv_text(header, rows), args.quiet)
    if not args.quiet:
        best = res.minimizer if args.param == "tau" else res.minimizer.gamma_end
        print(f"minimizer {args.param} = {fmt(best)}")
    return 0


def cmd_derived(args) -> int:
    if args.metric == "pgm":
        try:
            extra = float(args.extra)
        except ValueError:
            s = pgm_required(read_series(args.extra), args.ir_fraction)
            text, suffix = series_table({"year": s.years, "pgm_t": s.values}, args.format)
            write(args.out, f"pgm_required.{suffix}", text, args.quiet)
            return 0
        print(fmt(pgm_required(extra, args.ir_fraction)))
        return 0

    if args.scenario is None:
        raise UsageError(f"derived {args.metric}: --scenario is required")
    sc = load_scenario(resolve_scenario(args.scenario, args.config_dir)).scenario
    if args.metric == "maxcap":
        if args.supply is None:
            raise UsageError("derived maxcap: --supply is required")
        lim = max_capacity_path(read_series(args.supply), sc.omega, sc)
        cols = {"year": lim.cumulative.years, "cumulative_gw": lim.cumulative.values,
                "additions_gw": lim.additions.values, "available_t": lim.available.values,
                "allocated_t": lim.allocated.values, "unreplaced_gw": lim.unreplaced.values}
        text, suffix = series_table(cols, args.format)
        write(args.out, f"max_capacity.{suffix}", text, args.quiet)
        return 0
    oms = omega_series(sc.omega, *sc.horizon)
    tau = args.tau if args.tau is not None else sc.tau_mean
    rate = required_dissolution_rate(oms, tau, args.power_density, args.capacity_factor,
                                     args.hours, args.consumable_fraction)
    cols = {"year": rate.years, "omega_kg_per_gw": oms.values, "rate_mg_cm2_h": rate.values}
    text, suffix = series_table(cols, args.format)
    write(args.out, f"dissolution_rate.{suffix}", text, args.quiet)
    return 0


def cmd_run_matrix(args) -> int:
    summary = run_matrix(args.config_dir, args.out, args.manifest)
    if not args.quiet:
        for c in summary["cells"]:
            flags = ", ".join(f"{v}: {'feasible' if g['feasible'] else 'infeasible'}"
                              for v, g in c["gaps"].items())
            print(f"{c['scenario_id']}: {flags}; tau minimizer {c['tau_minimizer']}")
        print(f"wrote {len(summary['files']) + 1} files to {args.out}")
    return 0


# --- parser -------------------------------------------------------------------

def _globals(suppress: bool) -> argparse.ArgumentParser:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d(None), help="override the scenario seed")
    g.add_argument("--out", type=Path, default=d(Path(".")), help="output directory")
    g.add_argument("--format", choices=("csv", "json"), default=d("csv"))
    g.add_argument("--quiet", action="store_true", default=d(False))
    g.add_argument("--config-dir", type=Path, default=d(None),
                   help="data/config directory (default: $IRISIM_CONFIG_DIR or bundled data)")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _globals(suppress=True)
    parser = Parser(prog="irisim", parents=[_globals(suppress=False)],
                    description="Iridium demand, supply and gap simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("scenario", help="scenario config utilities", parents=[common])
    ssub = p.add_subparsers(dest="action", required=True, parser_class=Parser)
    v = ssub.add_parser("validate", help="check scenario configs", parents=[common])
    v.add_argument("configs", nargs="+", help="config paths or bundled scenario names")
    v.set_defaults(func=cmd_scenario_validate)

    p = sub.add_parser("simulate", help="simulate one scenario", parents=[common])
    p.add_argument("--scenario", required=True)
    p.add_argument("--engine", choices=("expected", "mc"), default="expected")
    p.add_argument("--subsample", type=int, help="physical units per simulated unit (mc)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("supply", help="project iridium available for PEM electrolysis",
                       parents=[common])
    p.add_argument("--history", help="sector history CSV (default: bundled)")
    p.add_argument("--variant", choices=("strong", "weak"), required=True)
    p.add_argument("--horizon", type=int, nargs=2, default=[2024, 2050], metavar=("FIRST", "LAST"))
    p.add_argument("--primary", type=float, default=7.5, help="primary supply, t/yr")
    p.set_defaults(func=cmd_supply)

    p = sub.add_parser("validate-history", help="check a sector history CSV", parents=[common])
    p.add_argument("history")
    p.set_defaults(func=cmd_validate_history)

    p = sub.add_parser("gaps", help="supply-demand gap report", parents=[common])
    p.add_argument("--demand", required=True)
    p.add_argument("--supply", required=True)
    p.add_argument("--stock0", type=float, default=1.0, help="initial stockpile, t")
    p.add_argument("--primary", type=float, default=7.5)
    p.add_argument("--definition", choices=PCT_DEFINITIONS, default="net")
    p.set_defaults(func=cmd_gaps)

    p = sub.add_parser("sweep", help="tau or gamma sensitivity sweep", parents=[common])
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", choices=("tau", "gamma"), required=True)
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--ramp-end-year", type=int)
    p.add_argument("--engine", choices=("expected", "mc"), default="expected")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("derived", help="PGM, capacity and dissolution metrics", parents=[common])
    p.add_argument("metric", choices=("pgm", "maxcap", "dissolution"))
    p.add_argument("--extra", default="0", help="pgm: t of iridium, or a CSV series")
    p.add_argument("--ir-fraction", type=float, default=0.02)
    p.add_argument("--scenario")
    p.add_argument("--supply", help="maxcap: supply CSV")
    p.add_argument("--tau", type=float)
    p.add_argument("--power-density", type=float, default=3.0, help="W/cm2")
    p.add_argument("--capacity-factor", type=float, default=0.9)
    p.add_argument("--hours", type=float, help="operating hours per year")
    p.add_argument("--consumable-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_derived)

    p = sub.add_parser("run-matrix", help="run the full scenario x supply matrix", parents=[common])
    p.add_argument("--manifest", default="matrix.toml")
    p.set_defaults(func=cmd_run_matrix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.config_dir = args.config_dir or default_config_dir()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"irisim: error: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"irisim: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"irisim: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

import csv
import filecmp
import json
import shutil
from pathlib import Path

import pytest

from irisim.cli import main, read_series
from irisim.config import CONFIG_DIR_ENV, default_config_dir
from irisim.fleet import DemandBreakdown
from irisim.runner import MatrixError, load_matrix, run_matrix
from irisim.series import from_csv, to_csv

DATA = default_config_dir()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def data_copy(tmp_path):
    dst = tmp_path / "data"
    shutil.copytree(DATA, dst, ignore=shutil.ignore_patterns("__pycache__"))
    return dst


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_scenario_validate(capsys):
    assert run("scenario", "validate", "conservative_bau", "optimistic_nze") == 0
    out = capsys.readouterr().out
    assert out.count("ok ") == 2


def test_scenario_validate_reports_bad_key(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text((DATA / "scenarios" / "conservative_bau.toml").read_text()
                   .replace("decay_rate", "decay_rat"))
    bad_anchor = tmp_path / "bau_anchors.csv"
    shutil.copy(DATA / "bau_anchors.csv", bad_anchor)
    bad.write_text(bad.read_text().replace("../bau_anchors.csv", "bau_anchors.csv"))
    assert run("scenario", "validate", bad) == 1
    assert "decay_rat" in capsys.readouterr().err


def test_simulate_writes_breakdown_and_meta(tmp_path):
    assert run("simulate", "--scenario", "conservative_bau", "--out", tmp_path, "--quiet") == 0
    rows = read_rows(tmp_path / "demand_breakdown.csv")
    assert list(rows[0]) == list(DemandBreakdown.COLUMNS)
    assert [int(r["year"]) for r in rows] == list(range(2024, 2051))
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    assert set(meta) >= {"scenario_id", "engine", "seed", "config_digest", "tool_version",
                         "rng_algorithm", "timestamp"}
    assert meta["engine"] == "expected" and len(meta["config_digest"]) == 64
    assert meta["mass_balance_residual"] < 1e-9


def test_simulate_mc_seed_flag(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, seed in ((a, 7), (b, 7), (c, 8)):
        assert run("simulate", "--scenario", "conservative_bau", "--engine", "mc",
                   "--subsample", 10, "--seed", seed, "--out", out, "--quiet") == 0
    assert (a / "demand_breakdown.csv").read_bytes() == (b / "demand_breakdown.csv").read_bytes()
    assert (a / "demand_breakdown.csv").read_bytes() != (c / "demand_breakdown.csv").read_bytes()
    assert json.loads((a / "run_meta.json").read_text())["seed"] == 7


def test_json_format(tmp_path):
    assert run("simulate", "--scenario", "optimistic_bau", "--format", "json", "--out", tmp_path,
               "--quiet") == 0
    doc = json.loads((tmp_path / "demand_breakdown.json").read_text())
    assert doc["year"][0] == 2024 and len(doc["m_total"]) == 27


def test_supply_then_gaps_pipeline(tmp_path):
    assert run("simulate", "--scenario", "conservative_bau", "--out", tmp_path, "--quiet") == 0
    assert run("supply", "--variant", "strong", "--out", tmp_path, "--quiet") == 0
    assert run("gaps", "--demand", tmp_path / "demand_breakdown.csv",
               "--supply", tmp_path / "supply_strong.csv", "--stock0", 1.0,
               "--out", tmp_path, "--quiet") == 0
    rep = json.loads((tmp_path / "gap_report.json").read_text())
    assert rep["segments"][0]["kind"] == "shortfall"
    assert rep["initial_stock_t"] == 1.0
    stock = read_rows(tmp_path / "stockpile.csv")
    assert float(stock[-1]["stockpile_t"]) == pytest.approx(rep["final_stockpile_t"], abs=1e-12)


def test_gaps_rejects_unreadable_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("year,value\n2024,abc\n")
    assert run("gaps", "--demand", bad, "--supply", bad, "--out", tmp_path) == 1
    assert "line 2" in capsys.readouterr().err


def test_sweep_command(tmp_path, capsys):
    assert run("sweep", "--scenario", "conservative_bau", "--param", "tau",
               "--values", 6, 9, 12, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert [float(r["tau"]) for r in rows] == [6, 9, 12]
    assert "minimizer tau" in capsys.readouterr().out
    assert run("sweep", "--scenario", "conservative_bau", "--param", "gamma",
               "--values", 0.7, 0.9, "--out", tmp_path, "--quiet") == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert float(rows[0]["cumulative_demand_t"]) > float(rows[1]["cumulative_demand_t"])


def test_derived_commands(tmp_path, capsys):
    assert run("derived", "pgm", "--extra", 1.0) == 0
    assert float(capsys.readouterr().out) == pytest.approx(50.0)
    assert run("derived", "dissolution", "--scenario", "conservative_bau", "--tau", 14,
               "--out", tmp_path, "--quiet") == 0
    rows = read_rows(tmp_path / "dissolution_rate.csv")
    assert float(rows[0]["omega_kg_per_gw"]) == 750.0
    assert run("supply", "--variant", "weak", "--out", tmp_path, "--quiet") == 0
    assert run("derived", "maxcap", "--scenario", "conservative_bau",
               "--supply", tmp_path / "supply_weak.csv", "--out", tmp_path, "--quiet") == 0
    rows = read_rows(tmp_path / "max_capacity.csv")
    assert all(float(r["allocated_t"]) <= float(r["available_t"]) + 1e-9 for r in rows)
    assert run("derived", "maxcap", "--scenario", "conservative_bau") == 1


def test_validate_history_command(tmp_path, capsys):
    assert run("validate-history", DATA / "history.csv") == 0
    bad = tmp_path / "h.csv"
    bad.write_text((DATA / "history.csv").read_text().replace("2016,chemical,", "2016,chemical,-"))
    assert run("validate-history", bad) == 1
    assert "negative" in capsys.readouterr().err


def test_usage_and_runtime_exit_codes(tmp_path, data_copy, monkeypatch):
    assert run("simulate") == 1  # missing --scenario
    assert run("simulate", "--scenario", "no_such_scenario") == 1
    # an unwritable output location is a runtime failure, not a validation error
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("simulate", "--scenario", "conservative_bau", "--out", blocker / "sub") == 2


def test_env_var_overrides_config_dir(data_copy, monkeypatch, tmp_path):
    cfg = data_copy / "scenarios" / "conservative_bau.toml"
    cfg.write_text(cfg.read_text().replace("start = 750.0", "start = 700.0"))
    monkeypatch.setenv(CONFIG_DIR_ENV, str(data_copy))
    assert default_config_dir() == data_copy
    assert run("simulate", "--scenario", "conservative_bau", "--out", tmp_path / "o", "--quiet") == 0
    first = read_rows(tmp_path / "o" / "demand_breakdown.csv")[0]
    assert float(first["m_cap"]) == pytest.approx(2.3 * 0.700, rel=1e-12)


def test_read_series_round_trip(tmp_path):
    from irisim.series import T_PER_YR, make_series
    s = make_series(2024, [0.1, 1 / 3, 2.5], T_PER_YR)
    p = tmp_path / "s.csv"
    p.write_text(to_csv(s))
    assert read_series(p) == s
    assert from_csv(p.read_text()) == s


# --- matrix runner -------------------------------------------------------------

def test_run_matrix_bundle(tmp_path):
    summary = run_matrix(DATA, tmp_path / "out")
    out = tmp_path / "out"
    reports = sorted(out.glob("*/*/gap_report.json"))
    assert len(reports) == 8
    for cell in ("conservative_bau", "optimistic_bau", "conservative_nze", "optimistic_nze"):
        for panel in ("a_demand_supply", "b_gap_strong", "c_gap_weak", "d_gamma_variants",
                      "e_tau_early", "f_tau_cumulative"):
            assert (out / cell / f"fig_{panel}.csv").exists()
        assert (out / cell / "sweep_tau.csv").exists() and (out / cell / "sweep_gamma.csv").exists()
        manifest = json.loads((out / cell / "run_manifest.json").read_text())
        assert manifest["scenario_id"] == cell
    cells = {c["scenario_id"]: c for c in summary["cells"]}
    assert "reconstruction" in summary["supply_method"]
    assert not any(g["feasible"] for g in cells["conservative_nze"]["gaps"].values())
    assert len(read_rows(out / "conservative_bau" / "fig_e_tau_early.csv")) == 9


def test_run_matrix_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    run_matrix(DATA, tmp_path / "a")
    run_matrix(DATA, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")

    def same(c):
        return not (c.left_only or c.right_only or c.diff_files or c.funny_files) and all(
            same(s) for s in c.subdirs.values())

    # filecmp.dircmp compares shallowly; confirm contents byte for byte too
    assert same(cmp)
    for p in (tmp_path / "a").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_empty_manifest_leaves_no_output(data_copy, tmp_path):
    (data_copy / "empty.toml").write_text('history = "history.csv"\n')
    with pytest.raises(MatrixError):
        run_matrix(data_copy, tmp_path / "out", manifest="empty.toml")
    assert not (tmp_path / "out").exists()
    assert list(tmp_path.glob(".irisim-*")) == []
    assert run("run-matrix", "--config-dir", data_copy, "--manifest", "empty.toml",
               "--out", tmp_path / "out2") == 1
    assert not (tmp_path / "out2").exists()


def test_failing_cell_leaves_no_output(data_copy, tmp_path):
    # the last scenario fails only after earlier cells have been computed
    cfg = data_copy / "scenarios" / "optimistic_nze.toml"
    cfg.write_text(cfg.read_text().replace("tau_mean = 10", "tau_mean = 99"))
    assert run("run-matrix", "--config-dir", data_copy, "--out", tmp_path / "out") == 1
    assert not (tmp_path / "out").exists()


def test_manifest_errors(data_copy):
    m = data_copy / "matrix.toml"
    m.write_text(m.read_text().replace("early_years", "early_yrs"))
    with pytest.raises(Exception, match="early_yrs"):
        load_matrix(m)
    m.write_text((DATA / "matrix.toml").read_text().replace("scenarios/optimistic_nze.toml",
                                                             "scenarios/missing.toml"))
    with pytest.raises(Exception, match="missing.toml"):
        load_matrix(m)


def test_manifest_digest_tracks_inputs(data_copy, tmp_path):
    run_matrix(data_copy, tmp_path / "a")
    h = data_copy / "history.csv"
    h.write_text(h.read_text().replace("2023,chemical,0.638", "2023,chemical,0.640"))
    run_matrix(data_copy, tmp_path / "b")
    da = json.loads((tmp_path / "a" / "conservative_bau" / "run_manifest.json").read_text())
    db = json.loads((tmp_path / "b" / "conservative_bau" / "run_manifest.json").read_text())
    assert da["config_digest"] != db["config_digest"]

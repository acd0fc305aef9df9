"""Acceptance criteria, one test each. Every test records a PASS/FAIL line via ``report``.

Tolerances are pinned here and nowhere else.
"""

import filecmp
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.tsa.holtwinters import Holt

from irisim.config import default_config_dir, load_scenario
from irisim.fleet import mc_replicates, simulate_fleet_expected, simulate_fleet_mc
from irisim.gaps import analyze_gap, sweep_gamma, sweep_tau
from irisim.runner import run_matrix
from irisim.scenario import (
    CapacityPathway,
    OmegaTrajectory,
    RecyclingRamp,
    Scenario,
    gamma_at,
)
from irisim.series import GW_PER_YR, T_PER_YR, make_series
from irisim.supply import DampedTrendModel, damped_trend_filter, forecast, load_history, project_supply

DATA = default_config_dir()
SCEN = DATA / "scenarios"

# pinned tolerances
MC_REL_TOL = 0.01
MC_SE_MULT = 3.0
MC_REPLICATES = 20
MC_MIN_UNITS = 100_000
MC_BUDGET_S = 60.0
MASS_BALANCE_TOL = 1e-9
POINT_MASS_TOL = 1e-12
GAP_TOL = 1e-9
GAP_CASES = 1000
GAP_BUDGET_S = 5.0
HOLT_TOL = 1e-12
LIMIT_TOL = 1e-9
SWEEP_BUDGET_S = 120.0
PERF_BUDGET_S = 60.0


def scenario(name):
    return load_scenario(SCEN / f"{name}.toml").scenario


@pytest.fixture(scope="module")
def supplies():
    h = load_history((DATA / "history.csv").read_text())
    return {v: project_supply(h, v).available_for_pemel for v in ("strong", "weak")}


def _ratio(diff, tol):
    return np.where(tol > 0, diff / np.where(tol > 0, tol, 1.0), np.where(diff > 0, np.inf, 0.0))


def test_c01_mc_matches_expected(report):
    """MC estimate (mean of seeded replicates, SE = s/sqrt(R)) against the expected engine."""
    t0 = time.perf_counter()
    worst, single_worst, lines = 0.0, 0.0, []
    units_ok = True
    for name in ("conservative_bau", "conservative_nze"):
        for tau in (5, 10, 20):
            sc = scenario(name).with_(tau_mean=tau)
            ex = simulate_fleet_expected(sc).m_total.values
            runs = mc_replicates(sc, MC_REPLICATES)
            est = runs.mean(axis=0)
            sd = runs.std(axis=0, ddof=1)
            se = sd / math.sqrt(MC_REPLICATES)
            ratio = float(np.max(_ratio(np.abs(est - ex), np.maximum(MC_REL_TOL * np.abs(ex), MC_SE_MULT * se))))
            # a single run against its own spread, reported for information
            single = float(np.max(_ratio(np.abs(runs[0] - ex), np.maximum(MC_REL_TOL * np.abs(ex), MC_SE_MULT * sd))))
            worst = max(worst, ratio)
            single_worst = max(single_worst, single)
            units = int(simulate_fleet_mc(sc).meta["simulated_units"])
            units_ok &= units >= MC_MIN_UNITS
            lines.append(f"{name} tau={tau}: {units} units/run, worst |d|/tol {ratio:.2f}")
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and units_ok and elapsed <= MC_BUDGET_S
    report("C1 oracle equivalence", ok,
           f"6 fixtures x {MC_REPLICATES} replicates, worst |d|/max(1%,3SE) = {worst:.2f} "
           f"(single run vs its own sd: {single_worst:.2f}), {elapsed:.1f} s (<= {MC_BUDGET_S:.0f} s)")
    assert ok, "\n".join(lines)


def test_c02_mass_balance(report):
    """Checks sum(cap + eol) + sum(surplus) == sum(total) + sum(recycled).

    With total = max(net, 0) and surplus = max(-net, 0) this is the only
    consistent balance; the form with surplus on the right-hand side is
    checked as well on every run where no surplus occurs.
    """
    worst, literal_worst, runs = 0.0, 0.0, 0
    for name in ("conservative_bau", "optimistic_bau", "conservative_nze", "optimistic_nze"):
        base = scenario(name)
        for tau in (5, 10, 20):
            for bd in (simulate_fleet_expected(base.with_(tau_mean=tau)),
                       simulate_fleet_mc(base.with_(tau_mean=tau, mc_subsample=10))):
                runs += 1
                worst = max(worst, bd.mass_balance_residual())
                if not np.any(bd.surplus_recycled.values > 0):
                    lhs = math.fsum(bd.m_cap.values) + math.fsum(bd.m_eol.values)
                    rhs = (math.fsum(bd.m_total.values) + math.fsum(bd.m_recycling.values)
                           + math.fsum(bd.surplus_recycled.values))
                    literal_worst = max(literal_worst, abs(lhs - rhs) / lhs)
    ok = worst <= MASS_BALANCE_TOL and literal_worst <= MASS_BALANCE_TOL
    report("C2 mass balance", ok, f"{runs} runs, worst relative residual {worst:.1e} (<= 1e-9)")
    assert ok


def test_c03_point_mass(report):
    tau = 4
    adds = np.array([1.0, 2.0, 0.5, 3.0, 0.0, 1.5, 2.5, 0.0, 4.0, 1.0, 0.0, 2.0, 3.5, 1.0, 0.5])
    n = len(adds)
    sc = Scenario(CapacityPathway.from_additions(make_series(2024, adds, GW_PER_YR), "custom"),
                  OmegaTrajectory(800.0, 100.0, 0.15), RecyclingRamp(0.5, 0.95, 2032),
                  tau_mean=tau, horizon=(2024, 2024 + n - 1))
    w = sc.omega_values().values / 1000.0
    g = sc.gamma_values().values
    # literal lag-tau recursion written out by hand
    installed = np.zeros(n)
    cap, eol, rec, total = (np.zeros(n) for _ in range(4))
    for i in range(n):
        retiring = installed[i - tau] if i >= tau else 0.0
        installed[i] = adds[i] + retiring
        cap[i] = adds[i] * w[i]
        eol[i] = retiring * w[i]
        rec[i] = g[i] * (installed[i - tau] * w[i - tau] if i >= tau else 0.0)
        total[i] = max(cap[i] + eol[i] - rec[i], 0.0)
    bd = simulate_fleet_expected(sc, pmf={tau: 1.0})
    err = max(np.max(np.abs(bd.m_cap.values - cap)), np.max(np.abs(bd.m_eol.values - eol)),
              np.max(np.abs(bd.m_recycling.values - rec)), np.max(np.abs(bd.m_total.values - total)))
    ok = err <= POINT_MASS_TOL
    report("C3 point-mass degeneration", ok, f"15-year trace, max abs error {err:.1e} (<= 1e-12)")
    assert ok


def test_c04_endpoints(report):
    bau, nze = scenario("conservative_bau"), scenario("conservative_nze")
    g = bau.gamma
    vals = (bau.pathway.cumulative[2050], nze.pathway.cumulative[2050],
            gamma_at(g, 2024), gamma_at(g, 2035), gamma_at(g, 2045))
    ok = (vals[0] == 489.0 and vals[1] == pytest.approx(1468.0, rel=1e-15, abs=0)
          and vals[2] == 0.70 and vals[3] == 0.97 and vals[4] == 0.97)
    report("C4 exogenous endpoints", ok,
           "BAU {:.10g} GW, NZE {:.10g} GW, gamma 2024/2035/2045 = {}/{}/{}".format(*vals))
    assert ok


def test_c05_gap_identity(report):
    cases = [0]
    worst = [0.0]
    # hypothesis picks the seed and shape; numpy draws the values, which keeps
    # generation overhead small enough for the timing budget to mean something
    @settings(max_examples=GAP_CASES, deadline=None, database=None, derandomize=True)
    @given(st.integers(0, 2**63 - 1), st.integers(1, 60),
           st.floats(min_value=-50, max_value=50))
    def prop(seed, n, stock0):
        cases[0] += 1
        rng = np.random.default_rng(seed)
        dv = rng.uniform(0.0, 100.0, n)
        sv = rng.uniform(0.0, 100.0, n)
        tie = rng.random(n) < 0.2
        sv[tie] = dv[tie]
        dv[rng.random(n) < 0.1] = 0.0
        d = make_series(2024, dv, T_PER_YR)
        s = make_series(2024, sv, T_PER_YR)
        r = analyze_gap(d, s, initial_stock=stock0)
        net = math.fsum(r.gap.values)
        scale = max(math.fsum(np.abs(r.gap.values)), 1e-12)
        e1 = abs(r.total_shortfall - r.total_surplus - net) / scale
        e2 = abs(r.stockpile.values[-1] - (stock0 - (r.total_shortfall - r.total_surplus))) / (
            scale + abs(stock0))
        worst[0] = max(worst[0], e1, e2)
        assert e1 <= GAP_TOL and e2 <= GAP_TOL

    t0 = time.perf_counter()
    prop()
    elapsed = time.perf_counter() - t0
    ok = cases[0] >= GAP_CASES and elapsed < GAP_BUDGET_S and worst[0] <= GAP_TOL
    report("C5 gap identity", ok,
           f"{cases[0]} random cases, worst relative error {worst[0]:.1e}, {elapsed:.2f} s (< 5 s)")
    assert ok


def test_c06_damped_trend(report):
    fixtures = [
        [3.0, 3.4, 3.1, 3.9, 4.4, 4.2, 4.9, 5.3, 5.0, 5.8],
        [120.0, 118.0, 121.5, 117.0, 115.2, 113.9, 116.0, 110.4],
        [0.5, 1.7, 1.2, 2.9, 2.2, 3.6, 3.1, 4.8, 4.1, 5.7, 5.0, 6.6],
    ]
    holt_err = 0.0
    for y in map(np.asarray, fixtures):
        _, _, _, fitted = damped_trend_filter(y, 0.35, 0.15, 1.0)
        ref = Holt(y[1:], initialization_method="known", initial_level=y[0],
                   initial_trend=y[1] - y[0]).fit(smoothing_level=0.35, smoothing_trend=0.15,
                                                  optimized=False)
        holt_err = max(holt_err, float(np.max(np.abs(fitted - ref.fittedvalues))))
    m = DampedTrendModel(0.5, 0.5, 0.8, 100.0, 10.0, 0.0, 2023)
    two = forecast(m, 2).values[1]
    far = forecast(m, 500).values[-1]
    ok = holt_err <= HOLT_TOL and abs(two - 114.4) <= HOLT_TOL and abs(far - 140.0) <= LIMIT_TOL
    report("C6 damped trend", ok,
           f"Holt max error {holt_err:.1e}; 2-step {two:.12g}; h=500 {far:.12g} (limit 140)")
    assert ok


def test_c07_calibration(report, supplies):
    bau = scenario("conservative_bau")
    t = simulate_fleet_expected(bau).m_total
    years = t.years
    early = (years >= 2027) & (years <= 2029)
    i_peak = int(np.argmax(np.where(early, t.values, -np.inf)))
    mid = (years >= 2035) & (years <= 2039)
    i_min = int(np.argmin(np.where(mid, t.values, np.inf)))
    peak_ok = abs(t.values[i_peak] - 2.1) <= 0.4 and t.values[i_peak] == t.values[years <= 2031].max()
    min_ok = abs(t.values[i_min] - 1.1) <= 0.3 and t.values[i_min] == t.values[(years >= 2031) & (years <= 2045)].min()
    end_ok = abs(t[2050] - 3.1) <= 0.5

    rb = analyze_gap(t, supplies["strong"])
    seg = rb.segments[0]
    early_short = seg.integral if (seg.kind == "shortfall" and seg.start_year == 2024) else 0.0
    early_ok = abs(early_short - 4.5) <= 0.25 * 4.5

    nze = simulate_fleet_expected(scenario("conservative_nze")).m_total
    s_short = analyze_gap(nze, supplies["strong"]).total_shortfall
    w_short = analyze_gap(nze, supplies["weak"]).total_shortfall
    nze_ok = abs(s_short - 101) <= 0.25 * 101 and abs(w_short - 135) <= 0.25 * 135

    opt = scenario("optimistic_nze")
    sw = sweep_gamma(opt, [RecyclingRamp.constant(0.70), opt.gamma])
    diff = sw.cumulative_demand[0] - sw.cumulative_demand[1]
    gamma_ok = abs(diff - 9.2) <= 0.25 * 9.2

    ok = all((peak_ok, min_ok, end_ok, early_ok, nze_ok, gamma_ok))
    report("C7 calibration", ok,
           f"peak {t.values[i_peak]:.2f} t in {years[i_peak]}, min {t.values[i_min]:.2f} t in "
           f"{years[i_min]}, 2050 {t[2050]:.2f} t, early shortfall {early_short:.2f} t, "
           f"NZE shortfall {s_short:.1f}/{w_short:.1f} t, gamma difference {diff:.2f} t")
    assert ok


def test_c08_tau_sweep(report):
    t0 = time.perf_counter()
    bau = scenario("conservative_bau")
    with_rec = sweep_tau(bau)
    interior = min(with_rec.values) < with_rec.minimizer < max(with_rec.values)
    no_rec = sweep_tau(bau.with_(gamma=RecyclingRamp.constant(0.0)))
    maximal = no_rec.minimizer == max(no_rec.values)
    elapsed = time.perf_counter() - t0
    ok = interior and maximal and elapsed <= SWEEP_BUDGET_S
    report("C8 tau-sweep structure", ok,
           f"recycling on: minimizer tau={with_rec.minimizer}; gamma=0: minimizer "
           f"tau={no_rec.minimizer}; {elapsed:.2f} s (<= 120 s)")
    assert ok


def test_c09_determinism(report, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    run_matrix(DATA, tmp_path / "a")
    run_matrix(DATA, tmp_path / "b")
    csvs = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b",
                                           [str(p) for p in csvs], shallow=False)
    sc = scenario("conservative_bau").with_(mc_subsample=5)
    mc_same = simulate_fleet_mc(sc).to_csv() == simulate_fleet_mc(sc).to_csv()
    ok = bool(csvs) and not mismatch and not errors and mc_same
    report("C9 determinism", ok,
           f"{len(csvs)} matrix CSVs byte-identical across reruns: {not mismatch and not errors}; "
           f"MC rerun identical: {mc_same}")
    assert ok


def test_c10_performance(report):
    sc = scenario("conservative_nze").with_(mc_subsample=1)
    t0 = time.perf_counter()
    bd = simulate_fleet_mc(sc)
    elapsed = time.perf_counter() - t0
    units = bd.meta["simulated_units"]
    ok = elapsed < PERF_BUDGET_S and units >= 1_468_000
    report("C10 performance", ok,
           f"NZE-scale MC, subsample 1, {units} units in {elapsed:.2f} s (< 60 s)")
    assert ok

import csv
import math

import pytest

from evgrid.economics import CostStream
from evgrid.grid import FeederSpec, generate_synthetic_feeder, save_feeder
from evgrid.planner import ViolationRecord
from evgrid.study import (TABLE_COLUMNS, CellResult, FeederStudy, Inputs, StudyConfig, StudyError, StudyResult,
                          compute_table, emit_plot_data, load_feeders, reduction_pct, run_feeder, run_study,
                          write_artifacts)


def cell(fid="f", strategy="lb", scenario=1, peak=100.0, overloaded=(), tx_cost=0.0, line_cost=0.0, npv=0.0):
    costs = CostStream({2035: tx_cost + line_cost}, {"transformer": {2035: tx_cost}, "line": {2035: line_cost}})
    viol = [ViolationRecord(t, 2030, "summer", 18, "transformer_overload", 1.1) for t in overloaded]
    return CellResult(fid, strategy, scenario, [2034, 2035], {2034: 0.0, 2035: peak}, {}, {}, 10, [], viol, [],
                      costs, npv, {}, {}, {}, 0.0, 0.0)


def test_reduction_pct():
    assert reduction_pct(100.0, 90.0) == 10.0
    assert reduction_pct(100.0, 103.0) == pytest.approx(-3.0)
    assert reduction_pct(0.0, 0.0) == 0.0
    assert math.isnan(reduction_pct(0.0, 5.0))


def test_compute_table_examples():
    cells = [cell(scenario=1, peak=100.0, overloaded=("t1", "t2"), tx_cost=1000.0, npv=900.0),
             cell(scenario=4, peak=90.0, overloaded=("t1",), tx_cost=1030.0, npv=450.0),
             cell(strategy="tou", scenario=1), cell(strategy="tou", scenario=4)]
    rows = {r["strategy"]: r for r in compute_table(cells)}
    assert list(rows["lb"]) == list(TABLE_COLUMNS)
    lb = rows["lb"]
    assert (lb["peak_load_reduction_pct"], lb["overload_count_reduction_pct"],
            lb["transformer_cost_reduction_pct"], lb["line_cost_reduction_pct"], lb["npv_reduction_pct"]) == \
        (10.0, 50.0, -3.0, 0.0, 50.0)
    assert all(rows["tou"][k] == 0.0 for k in TABLE_COLUMNS[2:])


def test_compute_table_missing_baseline():
    with pytest.raises(KeyError, match="baseline"):
        compute_table([cell(scenario=4)])


def test_compute_table_rounding():
    cells = [cell(scenario=1, peak=3.0), cell(scenario=4, peak=2.0)]
    assert compute_table(cells, digits=2)[0]["peak_load_reduction_pct"] == 33.33
    assert compute_table(cells, digits=None)[0]["peak_load_reduction_pct"] == pytest.approx(100 / 3)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown strategy"):
        StudyConfig.from_dict({"strategies": ["v2g"]})
    with pytest.raises(ValueError, match="scenario"):
        StudyConfig.from_dict({"scenarios": [5]})
    with pytest.raises(ValueError, match="unknown config key"):
        StudyConfig.from_dict({"sede": 1})
    with pytest.raises(ValueError):
        StudyConfig.from_dict({"day_types": []})
    p = tmp_path / "c.yaml"
    p.write_text("strategies: [TOU, lb]\nscenarios: [1, 4]\nseed: 3\n")
    cfg = StudyConfig.load(p)
    assert cfg.strategies == ("tou", "lb") and cfg.scenarios == (1, 4)
    assert cfg.digest() == StudyConfig(strategies=("tou", "lb"), scenarios=(1, 4), seed=3).digest()


@pytest.fixture(scope="module")
def tiny():
    f = generate_synthetic_feeder(FeederSpec(14, seed=21, utilization=(0.7, 0.9)))
    cfg = StudyConfig(start_year=2022, end_year=2025, day_types=("summer", "winter"), seed=5,
                      ev_per_100kw=(5.0, 40.0))
    inputs = Inputs.resolve(cfg)
    return f, cfg, inputs, run_study([f], cfg, jobs=1, inputs=inputs)


def test_fleet_grows_linearly(tiny):
    f, cfg, inputs, _ = tiny
    fs = FeederStudy(f, cfg, inputs)
    sizes = [fs.fleet_size(y) for y in cfg.years]
    assert sizes == sorted(sizes) and sizes[-1] == round(40.0 * fs.peak_kw / 100)
    # each year's fleet is a prefix of the next, so the same vehicles persist
    a = fs.sessions(1, 2023, "summer")
    b = fs.sessions(1, 2024, "summer")
    assert b[:len(a)] == a


def test_scenario_one_is_strategy_invariant(tiny):
    *_, res = tiny
    for s in ("tou", "lb"):
        a, b = res.cell(res.cells[0].feeder_id, "unmanaged", 1), res.cell(res.cells[0].feeder_id, s, 1)
        assert a.plan == b.plan and a.violations == b.violations and a.npv_usd == b.npv_usd
        assert a.peak_kw == b.peak_kw


def test_cells_complete_and_balanced(tiny):
    f, cfg, _, res = tiny
    assert len(res.cells) == len(cfg.strategies) * len(cfg.scenarios)
    assert all(c.balance_error < 1e-8 for c in res.cells)
    assert all(not c.residuals for c in res.cells)
    assert {r["strategy"] for r in res.table} == set(cfg.strategies)
    with pytest.raises(KeyError):
        res.cell("nope", "lb", 1)


def test_enrollment_moves_load_under_tou(tiny):
    f, cfg, inputs, res = tiny
    fs = FeederStudy(f, cfg, inputs)
    ev1 = sum(s.daily() for s in fs.schedules("tou", 1, 2025, "summer"))
    ev4 = sum(s.daily() for s in fs.schedules("tou", 4, 2025, "summer"))
    assert ev4[17:21].sum() < ev1[17:21].sum()


def test_plot_data_row_counts(tiny, tmp_path):
    f, cfg, _, res = tiny
    emit_plot_data(res.cells, tmp_path)
    with open(tmp_path / "plots" / "load_profiles.csv") as fh:
        rows = list(csv.DictReader(fh))
    for s in cfg.strategies:
        n = sum(r["strategy"] == s for r in rows)
        assert n == 24 * len(cfg.day_types) * len(cfg.scenarios)
    with open(tmp_path / "plots" / "overload_trend.csv") as fh:
        series = {}
        for r in csv.DictReader(fh):
            series.setdefault((r["strategy"], r["scenario"]), []).append(float(r["cumulative_overloaded_pct"]))
    assert all(all(a <= b for a, b in zip(v, v[1:])) for v in series.values())


def test_empty_study_headers_only(tmp_path):
    emit_plot_data([], tmp_path)
    for p in (tmp_path / "plots").iterdir():
        assert len(p.read_text().splitlines()) == 1


def test_artifacts_and_determinism(tiny, tmp_path):
    f, cfg, inputs, res = tiny
    write_artifacts(res, tmp_path / "a")
    again = run_study([f], cfg, jobs=1, inputs=inputs)
    write_artifacts(again, tmp_path / "b")
    for p in sorted((tmp_path / "a").rglob("*.csv")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    names = {p.name for p in (tmp_path / "a" / "metrics").iterdir()}
    assert "lb_scenario1.csv" in names and "lb_scenario1_summary.csv" in names


def test_stage_error_names_the_cell():
    f = generate_synthetic_feeder(FeederSpec(10, seed=2))
    cfg = StudyConfig(start_year=2022, end_year=2023, day_types=("summer",), strategies=("lb",), scenarios=(1,),
                      max_iter=1, tolerance=1e-30)
    with pytest.raises(StudyError, match=f"feeder {f.id}, strategy lb, scenario 1"):
        run_feeder(f, cfg)


def test_load_feeders_from_directory(tmp_path):
    for s in (3, 1):
        save_feeder(generate_synthetic_feeder(FeederSpec(5, seed=s, feeder_id=f"x{s}")), tmp_path / f"x{s}.json")
    assert [f.id for f in load_feeders([str(tmp_path)])] == ["x1", "x3"]


def test_study_result_holds_config():
    r = StudyResult(StudyConfig(), [])
    assert r.table == [] and r.config.years[0] == 2022 and len(r.config.years) == 14

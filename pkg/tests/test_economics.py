import pytest
from hypothesis import assume, given, strategies as st

from evgrid.economics import CostEntry, CostTable, MissingCostError, action_cost, cost_plan, npv
from evgrid.grid import LINE_AMPACITY_LADDER_A, transformer_ladder
from evgrid.planner import CAPACITOR_LADDER_KVAR, UpgradeAction

streams = st.dictionaries(st.integers(2022, 2040), st.floats(0, 1e7), min_size=1, max_size=10)
rates = st.floats(0.0, 0.2)


def test_single_cost_example():
    # 1000 / 1.03^3, factor worked by hand: 1.03^3 = 1.092727
    assert abs(npv({2025: 1000.0}, 0.03, 2022) - 1000 / 1.092727) < 1e-9
    assert abs(npv({2025: 1000.0}, 0.03, 2022) - 915.1416593531) < 1e-9


def test_zero_rate_is_plain_sum():
    assert npv({2022: 10.0, 2030: 5.0, 2035: 1.0}, 0.0) == 16.0


def test_base_year_defaults_to_first_cost():
    assert npv({2022: 1000.0}) == 1000.0
    assert npv({}) == 0.0


def test_npv_errors():
    with pytest.raises(ValueError):
        npv({2022: 1.0}, -1.0)
    with pytest.raises(ValueError):
        npv({2022: 1.0}, 0.03, base_year=2023)


@given(streams, streams, st.floats(0, 100), rates)
def test_linearity(a, b, k, r):
    both = {y: a.get(y, 0.0) + k * b.get(y, 0.0) for y in set(a) | set(b)}
    lhs = npv(both, r, 2022)
    rhs = npv(a, r, 2022) + k * npv(b, r, 2022)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-6)


@given(streams, rates, rates)
def test_rate_monotone(s, r1, r2):
    lo, hi = sorted((r1, r2))
    assert npv(s, hi, 2022) <= npv(s, lo, 2022) * (1 + 1e-12)


@given(st.integers(2022, 2050), st.floats(1.0, 1e7), st.floats(0.001, 0.2))
def test_deferral_lowers_npv(year, c, r):
    assume(c / (1 + r) ** (year + 1 - 2022) < c / (1 + r) ** (year - 2022))
    assert npv({year + 1: c}, r, 2022) < npv({year: c}, r, 2022)


def tx(year, size, units=1, cid="t1"):
    return UpgradeAction(cid, year, "resize_transformer", 50.0, size * units, cost_kind="transformer_1ph",
                         unit_size=size, units=units)


def test_cost_plan_totals():
    table = CostTable.default()
    line = UpgradeAction("l1", 2030, "resize_line", 100.0, 200.0, cost_kind="line", unit_size=200.0, length_mi=0.5)
    cap = UpgradeAction("b3", 2030, "add_capacitor", 0.0, 300.0, cost_kind="capacitor", unit_size=300.0)
    plan = [tx(2025, 100.0), tx(2030, 167.0, 2, "t2"), line, cap]
    stream = cost_plan(plan, table, range(2022, 2036))
    assert set(stream.costs) == set(range(2022, 2036))
    assert stream.costs[2023] == 0.0
    assert stream.total == pytest.approx(sum(action_cost(a, table) for a in plan))
    assert action_cost(plan[1], table) == 2 * table.lookup("transformer_1ph", 167.0).unit_cost_usd
    assert action_cost(line, table) == 0.5 * table.lookup("line", 200.0).unit_cost_usd
    assert stream.category_total("transformer") + stream.category_total("line") + \
        stream.category_total("capacitor") == pytest.approx(stream.total)
    assert stream.category_total("nothing") == 0.0


def test_missing_cost():
    with pytest.raises(MissingCostError, match="transformer_1ph"):
        cost_plan([tx(2025, 99.0)], CostTable.default())


def test_default_table_covers_every_ladder():
    table = CostTable.default()
    for ph, kind in ((1, "transformer_1ph"), (2, "transformer_2ph"), (3, "transformer_3ph")):
        for size in transformer_ladder(ph):
            assert table.lookup(kind, size).unit_cost_usd > 0
    for amp in LINE_AMPACITY_LADDER_A:
        assert table.lookup("line", amp).per_mile
    for kvar in CAPACITOR_LADDER_KVAR:
        table.lookup("capacitor", kvar)


def test_table_csv_round_trip(tmp_path):
    table = CostTable.default()
    table.write_csv(tmp_path / "c.csv")
    back = CostTable.read_csv(tmp_path / "c.csv")
    assert back.entries == table.entries


def test_table_rejects_bad_rows(tmp_path):
    with pytest.raises(ValueError):
        CostTable([CostEntry("line", 100.0, 0.0)])
    p = tmp_path / "bad.csv"
    p.write_text("kind,size\nline,100\n")
    with pytest.raises(ValueError, match="unit_cost_usd"):
        CostTable.read_csv(p)
    p.write_text("kind,size,unit_cost_usd\nline,abc,5\n")
    with pytest.raises(ValueError, match=":2"):
        CostTable.read_csv(p)

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evgrid.grid import FeederSpec, generate_synthetic_feeder
from evgrid.powerflow import (ConfigurationError, ConvergenceError, Network, ProfileStore, TimeSeriesProfile,
                              solve_snapshot, solve_timeseries, write_loading_csv, write_voltage_csv)
from oracles import newton_raphson, two_bus_voltage

from conftest import small_feeder, two_bus


def flat_profiles(value=1.0):
    store = ProfileStore()
    for cls in ("residential", "commercial", "industrial", "mixed"):
        for d in ("winter", "summer", "shoulder"):
            store.add(TimeSeriesProfile(cls, d, (value,) * 24))
    return store


def max_dv(feeder, load_kw, shunt=None):
    ref = newton_raphson(feeder, load_kw, shunt)
    res = solve_snapshot(feeder, load_kw, shunt_kvar=shunt)
    return max(abs(abs(res.bus_voltage(b)[p]) - v) for (b, p), v in ref.items())


def test_no_load():
    f = small_feeder()
    res = solve_snapshot(f, {})
    assert np.allclose(res.voltage_magnitude, 1.0, atol=0, rtol=0)
    assert res.losses_kw == 0.0
    assert all(v == 0.0 for v in res.branch_amps("l1").values())


def test_two_bus_closed_form():
    # 7.2 kV line-to-neutral on a 1000 kVA per-phase base: zbase = 51.84 ohm
    zbase = 7.2 ** 2 * 1000 / 1000
    f = two_bus(0.01 * zbase, 0.02 * zbase)
    pf = 0.1 / math.hypot(0.1, 0.05)
    f = replace(f, loads=(replace(f.loads[0], power_factor=pf),))
    res = solve_snapshot(f, {"ld1": 100.0})
    assert abs(abs(res.bus_voltage("b1")["A"]) - two_bus_voltage(0.01, 0.02, 0.1, 0.05)) < 1e-6


@given(st.floats(0.001, 0.05), st.floats(0.001, 0.1), st.floats(0.0, 0.5), st.floats(0.5, 1.0))
def test_two_bus_closed_form_property(r, x, p, pf):
    zbase = 51.84
    f = two_bus(r * zbase, x * zbase)
    f = replace(f, loads=(replace(f.loads[0], power_factor=pf),))
    q = p * math.tan(math.acos(pf))
    res = solve_snapshot(f, {"ld1": p * 1000})
    assert abs(abs(res.bus_voltage("b1")["A"]) - two_bus_voltage(r, x, p, q)) < 1e-6


def test_eight_bus_matches_nodal_oracle():
    f = generate_synthetic_feeder(FeederSpec(8, class_mix={"residential": 0.5, "commercial": 0.5}, seed=3,
                                             three_phase_fraction=0.5))
    rng = np.random.default_rng(3)
    loads = {ld.id: ld.peak_kw * rng.uniform(0.2, 1.5) for ld in f.loads}
    assert max_dv(f, loads) < 1e-5


@given(st.integers(2, 10), st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_oracle_equivalence_property(n, seed, scale):
    f = generate_synthetic_feeder(FeederSpec(n, class_mix={"residential": 0.6, "industrial": 0.4}, seed=seed,
                                             three_phase_fraction=0.5))
    loads = {ld.id: ld.peak_kw * scale for ld in f.loads}
    shunt = {f.buses[-1].id: 10.0}
    assert max_dv(f, loads, shunt) < 1e-5


def test_source_voltage_and_balance():
    f = generate_synthetic_feeder(FeederSpec(30, seed=4))
    res = solve_snapshot(f, {ld.id: ld.peak_kw for ld in f.loads})
    src = res.bus_voltage("b0")
    ref = {"A": 1.0, "B": np.exp(-2j * np.pi / 3), "C": np.exp(2j * np.pi / 3)}
    assert src == ref
    assert all(abs(abs(v) - 1.0) <= 1e-15 for v in src.values())
    assert abs(res.source_kw - (res.load_kw + res.losses_kw)) < 1e-8 * abs(res.source_kw)
    assert np.all(res.voltage_magnitude > 0)


def test_voltage_non_increasing_along_path():
    f = small_feeder()
    res = solve_snapshot(f, {"ld2": 40.0})
    path = ["b0", "b1", "b2", "s2"]
    v = [abs(res.bus_voltage(b)["A"]) for b in path]
    assert all(a >= b for a, b in zip(v, v[1:]))


def test_capacitor_raises_voltage():
    f = small_feeder(lateral_mi=5.0)
    loads = {"ld1": 30.0, "ld2": 45.0}
    plain = solve_snapshot(f, loads)
    cap = solve_snapshot(f, loads, shunt_kvar={"b2": 100.0})
    assert abs(cap.bus_voltage("s2")["A"]) > abs(plain.bus_voltage("s2")["A"])


def test_zero_impedance_is_configuration_error():
    f = small_feeder().with_line("l1", resistance_ohm_per_mi=0.0, reactance_ohm_per_mi=0.0)
    with pytest.raises(ConfigurationError, match="l1"):
        solve_snapshot(f, {})


def test_nonconvergence_names_worst_bus():
    f = small_feeder(lateral_mi=40.0)
    with pytest.raises(ConvergenceError) as err:
        solve_snapshot(f, {"ld2": 2000.0}, max_iter=5)
    assert err.value.worst_bus is not None


def test_deterministic():
    f = generate_synthetic_feeder(FeederSpec(20, seed=9))
    loads = {ld.id: ld.peak_kw for ld in f.loads}
    a, b = solve_snapshot(f, loads), solve_snapshot(f, loads)
    assert np.array_equal(a.voltage, b.voltage)


def test_flat_profile_gives_identical_hours():
    f = generate_synthetic_feeder(FeederSpec(12, seed=2))
    r = solve_timeseries(f, flat_profiles(), "summer")
    assert np.all(r.flow.voltage == r.flow.voltage[0])


def test_timeseries_matches_snapshots():
    f = generate_synthetic_feeder(FeederSpec(16, seed=5))
    store = ProfileStore.default()
    r = solve_timeseries(f, store, "winter")
    for h in (0, 7, 18):
        loads = {ld.id: ld.peak_kw * store.multipliers(ld.profile_id, "winter")[h] for ld in f.loads}
        snap = solve_snapshot(f, loads)
        assert np.allclose(r.snapshots[h].voltage, snap.voltage, atol=1e-12)
    # extrema are elementwise over the 24 hours
    for c, v in r.max_loading.items():
        assert v == max(float(r.flow.loading[h, r.network.comp_index[c]]) for h in range(24))


def test_ev_at_hour_increases_path_flow():
    f = small_feeder()
    ev = {"s2": np.zeros(24)}
    ev["s2"][20] = 10.0
    r = solve_timeseries(f, flat_profiles(0.5), "summer", ev)
    net = r.network
    for c in ("l1", "l2", "t2"):
        j = net.comp_index[c]
        assert r.flow.branch_kva[20, j] > r.flow.branch_kva[19, j]


def test_zero_base_single_ev_balance():
    f = small_feeder()
    ev = {"s1": np.zeros(24)}
    ev["s1"][3:6] = 7.2
    r = solve_timeseries(f, flat_profiles(0.0), "summer", ev)
    np.testing.assert_allclose(r.source_kw, r.ev_kw + r.flow.losses_kw, rtol=1e-8, atol=1e-12)


def test_missing_profile():
    f = small_feeder()
    with pytest.raises(KeyError, match="residential"):
        solve_timeseries(f, ProfileStore(), "summer")


def test_profile_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        TimeSeriesProfile("p", "summer", (1.0,) * 23)
    with pytest.raises(ValueError):
        TimeSeriesProfile("p", "summer", (-1.0,) + (1.0,) * 23)
    store = ProfileStore.default()
    store.write_csv(tmp_path / "p.csv")
    assert ProfileStore.read_csv(tmp_path / "p.csv") == store


def test_result_csvs(tmp_path):
    f = small_feeder()
    r = solve_timeseries(f, ProfileStore.default(), "summer")
    write_loading_csv(r, tmp_path / "load.csv")
    write_voltage_csv(r, tmp_path / "volt.csv")
    assert len((tmp_path / "load.csv").read_text().splitlines()) > 24
    assert len((tmp_path / "volt.csv").read_text().splitlines()) > 24


def test_transformer_phases_follow_secondary():
    net = Network(small_feeder())
    assert [b for b, _ in net.node_index if b == "s2"] == ["s2"]

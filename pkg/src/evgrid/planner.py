"""Violation detection, dated upgrade planning, and plan verification.

The planner never runs a load flow itself; callers hand it a ``simulate`` callable
``(year, feeder, shunt_kvar) -> {day_type: TimeSeriesResult}`` so the same code
serves the study engine and the tests.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .economics import CostTable, action_cost
from .grid import LINE_AMPACITY_LADDER_A, Feeder, transformer_ladder
from .powerflow import ConvergenceError, TimeSeriesResult

CAPACITOR_LADDER_KVAR = (50.0, 100.0, 150.0, 300.0, 600.0, 900.0, 1200.0)
_LOAD_EPS = 1e-9

YearResults = Mapping[str, TimeSeriesResult]
Simulator = Callable[[int, Feeder, Mapping[str, float]], YearResults]


@dataclass(frozen=True)
class Limits:
    thermal: float = 1.0          # fraction of nameplate / ampacity
    v_min: float = 0.95
    v_max: float = 1.05           # reported only; overvoltage is not remediated


@dataclass(frozen=True)
class ViolationRecord:
    component_id: str
    year: int
    day_type: str
    hour: int
    kind: str                     # transformer_overload | line_overload | undervoltage
    magnitude: float              # loading fraction or voltage pu


@dataclass(frozen=True)
class UpgradeAction:
    component_id: str             # transformer/line id, or the bus a capacitor sits on
    year: int
    action: str                   # resize_transformer | resize_line | add_capacitor
    old_rating: float
    new_rating: float
    unit_cost_usd: float = 0.0
    cost_kind: str = ""
    unit_size: float = 0.0
    units: int = 1
    length_mi: float = 0.0
    escalated: bool = False       # demand beyond the largest ladder size; parallel units

    @property
    def category(self) -> str:
        return {"resize_transformer": "transformer", "resize_line": "line",
                "add_capacitor": "capacitor"}[self.action]


# ---------------------------------------------------------------------------
# detection


def _check_years(results: Mapping[int, YearResults], years: Iterable[int] | None) -> list[int]:
    ys = sorted(results) if years is None else list(years)
    missing = [y for y in ys if y not in results]
    if missing:
        raise KeyError(f"missing load-flow results for study year(s) {missing}")
    return ys


def detect_violations(results: Mapping[int, YearResults], years: Iterable[int] | None = None,
                      limits: Limits = Limits()) -> list[ViolationRecord]:
    """One record per component-hour thermal breach and per bus-hour undervoltage."""
    out = []
    for y in _check_years(results, years):
        for day, r in results[y].items():
            net = r.network
            load = r.flow.loading
            hh, cc = np.nonzero(load > limits.thermal + _LOAD_EPS)
            for h, c in zip(hh.tolist(), cc.tolist()):
                kind = "transformer_overload" if net.comp_is_tx[c] else "line_overload"
                out.append(ViolationRecord(net.components[c], y, day, h, kind, float(load[h, c])))
            vmin = r.flow.bus_min_voltage
            hh, bb = np.nonzero(vmin < limits.v_min)
            for h, b in zip(hh.tolist(), bb.tolist()):
                out.append(ViolationRecord(net.bus_ids[b], y, day, h, "undervoltage", float(vmin[h, b])))
    return out


def _year_status(res: YearResults, limits: Limits) -> tuple[bool, bool]:
    thermal = any(bool((r.flow.loading > limits.thermal + _LOAD_EPS).any()) for r in res.values())
    under = any(bool((r.flow.bus_min_voltage < limits.v_min).any()) for r in res.values())
    return thermal, under


def peak_demand(results: Mapping[int, YearResults]) -> dict[str, float]:
    """Study-period maximum of kVA (transformers) or amperes (lines) per component."""
    peak: dict[str, float] = {}
    for res in results.values():
        for r in res.values():
            net = r.network
            demand = np.where(net.comp_is_tx, r.flow.branch_kva, r.flow.branch_amps).max(axis=0)
            for cid, v in zip(net.components, demand.tolist()):
                peak[cid] = max(peak.get(cid, 0.0), v)
    return peak


# ---------------------------------------------------------------------------
# planning


def _ladder_size(ladder: Sequence[float], need: float) -> tuple[float, float, int, bool]:
    """(new rating, unit size, unit count, escalated) for demand ``need``."""
    for s in ladder:
        if s >= need:
            return s, s, 1, False
    top = ladder[-1]
    units = int(math.ceil(need / top))
    return units * top, top, units, True


def plan_thermal_upgrades(feeder: Feeder, violations: Iterable[ViolationRecord],
                          peak: Mapping[str, float],
                          line_ladder: Sequence[float] = LINE_AMPACITY_LADDER_A,
                          cost_table: CostTable | None = None) -> list[UpgradeAction]:
    """One resize per overloaded component, dated at its first violation year and
    sized to the smallest ladder step covering its study-period peak."""
    first: dict[str, int] = {}
    for v in violations:
        if v.kind in ("transformer_overload", "line_overload"):
            first[v.component_id] = min(v.year, first.get(v.component_id, v.year))
    out = []
    for cid in sorted(first):
        if cid in feeder.transformer_map:
            t = feeder.transformer_map[cid]
            new, unit, n, esc = _ladder_size(transformer_ladder(t.phase_count), peak[cid])
            act = UpgradeAction(cid, first[cid], "resize_transformer", t.rating_kva, new,
                                cost_kind=f"transformer_{t.phase_count}ph", unit_size=unit, units=n,
                                escalated=esc)
        else:
            ln = feeder.line_map[cid]
            new, unit, n, esc = _ladder_size(line_ladder, peak[cid])
            act = UpgradeAction(cid, first[cid], "resize_line", ln.ampacity_a, new, cost_kind="line",
                                unit_size=unit, units=n, length_mi=ln.length_mi, escalated=esc)
        out.append(_priced(act, cost_table))
    return out


def _priced(act: UpgradeAction, table: CostTable | None) -> UpgradeAction:
    return act if table is None else replace(act, unit_cost_usd=action_cost(act, table))


def apply_plan(feeder: Feeder, plan: Iterable[UpgradeAction], year: int | None = None
               ) -> tuple[Feeder, dict[str, float]]:
    """Feeder and capacitor placement in effect in ``year`` (all actions when None)."""
    shunts: dict[str, float] = {}
    for a in sorted(plan, key=lambda a: (a.year, a.component_id)):
        if year is not None and a.year > year:
            continue
        if a.action == "resize_transformer":
            feeder = feeder.with_transformer(a.component_id, rating_kva=a.new_rating)
        elif a.action == "resize_line":
            feeder = feeder.with_line(a.component_id, ampacity_a=a.new_rating)
        else:
            shunts[a.component_id] = shunts.get(a.component_id, 0.0) + a.new_rating
    return feeder, shunts


class PlanSimulator:
    """Memoized re-simulation of a feeder under a plan, year by year."""

    def __init__(self, feeder: Feeder, simulate: Simulator, years: Sequence[int], limits: Limits = Limits()):
        self.feeder = feeder
        self.simulate = simulate
        self.years = list(years)
        self.limits = limits
        self._cache: dict[tuple, YearResults] = {}

    def year(self, plan: Iterable[UpgradeAction], year: int,
             extra_shunt: Mapping[str, float] | None = None) -> YearResults:
        active = frozenset(a for a in plan if a.year <= year)
        key = (year, active, tuple(sorted((extra_shunt or {}).items())))
        if key not in self._cache:
            f, shunts = apply_plan(self.feeder, active)
            for b, q in (extra_shunt or {}).items():
                shunts[b] = shunts.get(b, 0.0) + q
            self._cache[key] = self.simulate(year, f, shunts)
        return self._cache[key]

    def all_years(self, plan: Iterable[UpgradeAction]) -> dict[int, YearResults]:
        plan = list(plan)
        return {y: self.year(plan, y) for y in self.years}

    def clean(self, plan: Iterable[UpgradeAction], from_year: int | None = None) -> bool:
        plan = list(plan)
        for y in self.years:
            if from_year is not None and y < from_year:
                continue
            if any(self.status(plan, y)):
                return False
        return True

    def status(self, plan, year, extra_shunt=None) -> tuple[bool, bool]:
        return _year_status(self.year(plan, year, extra_shunt), self.limits)


def _worst_bus(res: YearResults) -> tuple[str, float]:
    best = None
    for day in sorted(res):
        r = res[day]
        vmin = r.flow.bus_min_voltage.min(axis=0)
        for b, v in zip(r.network.bus_ids, vmin.tolist()):
            if best is None or (v, b) < best:
                best = (v, b)
    return best[1], best[0]


def _min_v(res: YearResults) -> float:
    return min(float(r.flow.bus_min_voltage.min()) for r in res.values())


def plan_voltage_support(sim: PlanSimulator, plan: Sequence[UpgradeAction],
                         ladder: Sequence[float] = CAPACITOR_LADDER_KVAR, max_banks: int = 5,
                         cost_table: CostTable | None = None) -> list[UpgradeAction]:
    """Capacitor banks for residual undervoltage, added in the year the sag appears.

    For each study year in order, with every earlier action in place: try the worst
    bus first, then each bus upstream of it toward the source, and take the first
    (bus, size) that lifts the year's minimum voltage to the limit without creating
    a thermal violation. If no single bank does, keep the bank that raises the
    minimum the most and repeat, up to ``max_banks`` per year.
    """
    plan = list(plan)
    added: list[UpgradeAction] = []
    tree = sim.feeder.tree
    for y in sim.years:
        for _ in range(max_banks):
            current = plan + added
            res = sim.year(current, y)
            if _min_v(res) >= sim.limits.v_min:
                break
            worst, _ = _worst_bus(res)
            base_min = _min_v(res)
            chosen, fallback = None, None
            for bus in tree.path_to_root(worst)[:-1] or [worst]:
                for kvar in ladder:
                    try:
                        trial = sim.year(current, y, {bus: kvar})
                    except ConvergenceError:
                        continue  # bank too large for this bus; not a usable candidate
                    thermal, under = _year_status(trial, sim.limits)
                    if thermal:
                        continue
                    if not under:
                        chosen = (bus, kvar)
                        break
                    v = _min_v(trial)
                    if v > base_min + 1e-9 and (fallback is None or v > fallback[0] + 1e-12):
                        fallback = (v, bus, kvar)
                if chosen:
                    break
            if chosen is None and fallback is None:
                break
            bus, kvar = chosen if chosen else fallback[1:]
            added.append(_priced(UpgradeAction(bus, y, "add_capacitor", 0.0, kvar, cost_kind="capacitor",
                                               unit_size=kvar), cost_table))
            if chosen:
                break
    return added


@dataclass
class VerificationReport:
    residuals: list[ViolationRecord]
    min_voltage: dict[int, float]
    max_loading: dict[int, float]

    @property
    def clean(self) -> bool:
        return not self.residuals

    @property
    def thermal_residuals(self) -> list[ViolationRecord]:
        return [r for r in self.residuals if r.kind != "undervoltage"]


def verify_plan(sim: PlanSimulator, plan: Sequence[UpgradeAction]) -> VerificationReport:
    """Re-simulate every year with actions applied from their year onward."""
    results = sim.all_years(plan)
    residuals = detect_violations(results, sim.years, sim.limits)
    vmin = {y: _min_v(res) for y, res in results.items()}
    lmax = {y: max(float(r.flow.loading.max(initial=0.0)) for r in res.values()) for y, res in results.items()}
    return VerificationReport(residuals, vmin, lmax)


def _merge_thermal(plan: list[UpgradeAction], new: list[UpgradeAction]) -> list[UpgradeAction]:
    by_id = {a.component_id: a for a in plan if a.action != "add_capacitor"}
    rest = [a for a in plan if a.action == "add_capacitor"]
    for a in new:
        old = by_id.get(a.component_id)
        if old is None or a.new_rating > old.new_rating:
            year = a.year if old is None else min(a.year, old.year)
            by_id[a.component_id] = replace(a, year=year)
    return sorted(by_id.values(), key=lambda a: (a.year, a.component_id)) + rest


@dataclass
class PlanResult:
    plan: list[UpgradeAction]
    violations: list[ViolationRecord]          # before any upgrade
    baseline: dict[int, YearResults]           # results before any upgrade
    report: VerificationReport
    pruned: list[UpgradeAction] = field(default_factory=list)


def plan_upgrades(sim: PlanSimulator, line_ladder: Sequence[float] = LINE_AMPACITY_LADDER_A,
                  capacitor_ladder: Sequence[float] = CAPACITOR_LADDER_KVAR,
                  cost_table: CostTable | None = None, max_rounds: int = 3,
                  prune: bool = True) -> PlanResult:
    """Thermal upgrades first, then voltage support, then drop any action the rest
    of the plan makes redundant."""
    feeder = sim.feeder
    baseline = sim.all_years([])
    violations = detect_violations(baseline, sim.years, sim.limits)
    plan: list[UpgradeAction] = []
    results = baseline
    for _ in range(max_rounds):
        thermal = [v for v in detect_violations(results, sim.years, sim.limits) if v.kind != "undervoltage"]
        if thermal:
            plan = _merge_thermal(plan, plan_thermal_upgrades(feeder, thermal, peak_demand(results),
                                                              line_ladder, cost_table))
        plan = plan + plan_voltage_support(sim, plan, capacitor_ladder, cost_table=cost_table)
        results = sim.all_years(plan)
        if not any(v.kind != "undervoltage" for v in detect_violations(results, sim.years, sim.limits)):
            break

    pruned = []
    if prune:
        for a in sorted(plan, key=lambda a: (-a.year, a.action, a.component_id)):
            trial = [b for b in plan if b is not a]
            if sim.clean(trial, from_year=a.year) and sim.clean(plan, from_year=a.year):
                plan = trial
                pruned.append(a)
    return PlanResult(plan, violations, baseline, verify_plan(sim, plan), pruned)


def overload_trend(violations: Iterable[ViolationRecord], transformer_count: int,
                   years: Sequence[int]) -> dict[int, float]:
    """Cumulative share (%) of transformers overloaded at least once by each year."""
    first: dict[str, int] = {}
    for v in violations:
        if v.kind == "transformer_overload":
            first[v.component_id] = min(v.year, first.get(v.component_id, v.year))
    out = {}
    for y in years:
        n = sum(1 for fy in first.values() if fy <= y)
        out[y] = 100.0 * n / transformer_count if transformer_count else 0.0
    return out


# ---------------------------------------------------------------------------
# files

PLAN_COLUMNS = ("component_id", "kind", "year", "old_rating", "new_rating", "unit_cost_usd")
VIOLATION_COLUMNS = ("component_id", "year", "day_type", "hour", "kind", "magnitude")


def write_plan_csv(plan: Iterable[UpgradeAction], path, prefix: Sequence[tuple[str, str]] = ()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([k for k, _ in prefix] + list(PLAN_COLUMNS))
        for a in plan:
            w.writerow([v for _, v in prefix] + [a.component_id, a.action, a.year, repr(a.old_rating),
                                                 repr(a.new_rating), repr(a.unit_cost_usd)])


def write_violations_csv(violations: Iterable[ViolationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VIOLATION_COLUMNS)
        for v in violations:
            w.writerow([v.component_id, v.year, v.day_type, v.hour, v.kind, repr(v.magnitude)])


def read_plan_csv(path) -> list[UpgradeAction]:
    """Actions from a plan file; enough to re-simulate, not to re-price."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PLAN_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        return [UpgradeAction(r["component_id"], int(r["year"]), r["kind"], float(r["old_rating"]),
                              float(r["new_rating"]), float(r["unit_cost_usd"])) for r in reader]

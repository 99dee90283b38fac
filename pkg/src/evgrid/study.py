"""Study orchestration: fleet growth, scheduling, yearly load flow, planning, costing.

One *cell* is a (feeder, strategy, scenario) triple. Cells on the same feeder run in
one worker so the scheduling and load-flow caches are shared; identical EV demand
(every unmanaged cell, and scenario 1 of any strategy) is simulated once.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .charging import (DEFAULT_BEHAVIOR, TOU_WINDOW, BehaviorSpec, ChargingSchedule, EnrollmentTrajectory,
                       EVSession, aggregate_ev_load, apply_enrollment, generate_sessions, lb_schedule,
                       read_sessions_csv, tou_schedule, unmanaged_schedule)
from .economics import DEFAULT_DISCOUNT_RATE, CostStream, CostTable, cost_plan, npv
from .grid import LINE_AMPACITY_LADDER_A, Feeder, load_feeder
from .planner import (CAPACITOR_LADDER_KVAR, Limits, PlanSimulator, UpgradeAction, ViolationRecord,
                      overload_trend, plan_upgrades, write_plan_csv, write_violations_csv)
from .powerflow import DAY_TYPES, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE, Network, ProfileStore, solve_timeseries

STRATEGIES = ("unmanaged", "tou", "lb")
SCHEMA_VERSION = 1


class StudyError(RuntimeError):
    """A stage failure, tagged with the cell it happened in."""


@dataclass(frozen=True)
class StudyConfig:
    feeders: tuple[str, ...] = ()
    start_year: int = 2022
    end_year: int = 2035
    strategies: tuple[str, ...] = STRATEGIES
    scenarios: tuple[int, ...] = (1, 2, 3, 4)
    day_types: tuple[str, ...] = DAY_TYPES
    seed: int = 0
    # fleet size: vehicles per 100 kW of feeder peak demand, linear from start to end year
    ev_per_100kw: tuple[float, float] = (2.0, 20.0)
    profiles: str | None = None
    behavior: str | None = None
    cost_table: str | None = None
    sessions_dir: str | None = None
    tou_window: tuple[int, int] = TOU_WINDOW
    lb_threshold: float = 0.9
    thermal_limit: float = 1.0
    v_min: float = 0.95
    discount_rate: float = DEFAULT_DISCOUNT_RATE
    line_ladder: tuple[float, ...] = LINE_AMPACITY_LADDER_A
    capacitor_ladder: tuple[float, ...] = CAPACITOR_LADDER_KVAR
    tolerance: float = DEFAULT_TOLERANCE
    max_iter: int = DEFAULT_MAX_ITER
    baseline_scenario: int = 1
    compare_scenario: int = 4
    round_digits: int = 2

    def __post_init__(self):
        # normalize list-ish inputs so configs loaded from YAML hash and compare the same
        for f in ("feeders", "strategies", "scenarios", "day_types", "ev_per_100kw", "tou_window",
                  "line_ladder", "capacitor_ladder"):
            object.__setattr__(self, f, tuple(getattr(self, f)))
        object.__setattr__(self, "strategies", tuple(s.lower() for s in self.strategies))

    @property
    def years(self) -> list[int]:
        return list(range(self.start_year, self.end_year + 1))

    @property
    def limits(self) -> Limits:
        return Limits(thermal=self.thermal_limit, v_min=self.v_min)

    def check(self) -> None:
        if self.end_year <= self.start_year:
            raise ValueError("end_year must be after start_year")
        for name in ("strategies", "scenarios", "day_types"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ValueError(f"unknown strategy {bad[0]!r}; choose from {list(STRATEGIES)}")
        bad = [s for s in self.scenarios if s not in (1, 2, 3, 4)]
        if bad:
            raise ValueError(f"unknown scenario {bad[0]!r}; choose from [1, 2, 3, 4]")
        bad = [d for d in self.day_types if d not in DAY_TYPES]
        if bad:
            raise ValueError(f"unknown day type {bad[0]!r}")
        if len(set(self.strategies)) != len(self.strategies) or len(set(self.scenarios)) != len(self.scenarios):
            raise ValueError("strategies and scenarios must not repeat")
        if len(self.ev_per_100kw) != 2 or min(self.ev_per_100kw) < 0:
            raise ValueError("ev_per_100kw must be two non-negative numbers (start, end)")
        if not 0 <= self.tou_window[0] < self.tou_window[1] <= 24:
            raise ValueError("tou_window must satisfy 0 <= start < end <= 24")
        if not 0 < self.lb_threshold <= 1:
            raise ValueError("lb_threshold must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config key(s) {unknown}")
        cfg = cls(**d)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "StudyConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def subseed(seed: int, *labels) -> int:
    text = ":".join([str(seed), *map(str, labels)])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=4).digest(), "big")


def reduction_pct(baseline: float, value: float) -> float:
    """(baseline - value) / baseline * 100; 0 when both are zero, nan when only the baseline is."""
    if baseline == 0:
        return 0.0 if value == 0 else math.nan
    return (baseline - value) / baseline * 100.0


# ---------------------------------------------------------------------------
# one feeder


@dataclass
class Inputs:
    profiles: ProfileStore
    behavior: BehaviorSpec
    cost_table: CostTable

    @classmethod
    def resolve(cls, config: StudyConfig) -> "Inputs":
        profiles = ProfileStore.read_csv(config.profiles) if config.profiles else ProfileStore.default()
        if config.behavior:
            with open(config.behavior) as fh:
                behavior = BehaviorSpec.from_dict(yaml.safe_load(fh))
        else:
            behavior = BehaviorSpec.from_dict(DEFAULT_BEHAVIOR)
        table = CostTable.read_csv(config.cost_table) if config.cost_table else CostTable.default()
        return cls(profiles, behavior, table)


class FeederStudy:
    """Scheduling and load flow for every year and day of one feeder."""

    def __init__(self, feeder: Feeder, config: StudyConfig, inputs: Inputs):
        self.feeder = feeder
        self.config = config
        self.inputs = inputs
        self.years = config.years
        self.days = list(config.day_types)
        net = Network(feeder)
        self._networks = {feeder: net}
        self.base_kw = {d: inputs.profiles.base_load_kw(net, d) for d in self.days}
        self.peak_kw = sum(ld.peak_kw for ld in feeder.loads)
        self.fleet = {d: self._master_fleet(d) for d in self.days}
        self.enroll_seed = subseed(config.seed, feeder.id, "enrollment")

        # LB works per serving transformer against its nameplate rating
        self.tx_of_bus = {b.id: feeder.serving_transformer(b.id) for b in feeder.buses}
        pf = np.array([ld.power_factor for ld in feeder.loads])
        self.base_kva_by_tx = {}
        for d in self.days:
            per_tx: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(24))
            for k, ld in enumerate(feeder.loads):
                t = self.tx_of_bus[ld.bus]
                if t is not None:
                    per_tx[t.id] += self.base_kw[d][:, k] / pf[k]
            self.base_kva_by_tx[d] = dict(per_tx)
        self.balance_error = 0.0

    def fleet_size(self, year: int) -> int:
        a, b = self.config.ev_per_100kw
        frac = (year - self.years[0]) / (self.years[-1] - self.years[0])
        return int(round((a + (b - a) * frac) * self.peak_kw / 100.0))

    def _master_fleet(self, day: str) -> list[EVSession]:
        need = max(self.fleet_size(y) for y in self.years)
        if self.config.sessions_dir:
            path = Path(self.config.sessions_dir) / f"{self.feeder.id}_{day}.csv"
            fleet = read_sessions_csv(path)
            if len(fleet) < need:
                raise ValueError(f"{path}: {len(fleet)} sessions, study needs {need}")
            return fleet
        return generate_sessions(self.feeder, need, self.inputs.behavior,
                                 subseed(self.config.seed, self.feeder.id, "sessions"), day)

    def sessions(self, scenario: int, year: int, day: str) -> list[EVSession]:
        traj = EnrollmentTrajectory(scenario, self.years[0], self.years[-1])
        return apply_enrollment(self.fleet[day][:self.fleet_size(year)], traj, year, self.enroll_seed)

    def schedules(self, strategy: str, scenario: int, year: int, day: str) -> list[ChargingSchedule]:
        sessions = self.sessions(scenario, year, day)
        if strategy == "unmanaged":
            return [unmanaged_schedule(s) for s in sessions]
        if strategy == "tou":
            return [tou_schedule(s, self.config.tou_window) for s in sessions]
        groups: dict[str | None, list[EVSession]] = defaultdict(list)
        for s in sessions:
            t = self.tx_of_bus[s.bus]
            groups[t.id if t else None].append(s)
        out = {}
        for tid, group in groups.items():
            if tid is None:
                out.update((s.session_id, unmanaged_schedule(s)) for s in group)
                continue
            res = lb_schedule(group, self.feeder.transformer_map[tid].rating_kva,
                              self.base_kva_by_tx[day].get(tid, np.zeros(24)), self.config.lb_threshold)
            out.update((s.session_id, s) for s in res.schedules)
        return [out[s.session_id] for s in sessions]

    def ev_load(self, strategy: str, scenario: int) -> dict[int, dict[str, dict[str, np.ndarray]]]:
        return {y: {d: aggregate_ev_load(self.schedules(strategy, scenario, y, d)) for d in self.days}
                for y in self.years}

    def network(self, feeder: Feeder) -> Network:
        if feeder not in self._networks:
            self._networks[feeder] = Network(feeder)
        return self._networks[feeder]

    def simulator(self, ev: Mapping[int, Mapping[str, Mapping[str, np.ndarray]]]):
        def simulate(year, feeder, shunts):
            net = self.network(feeder)
            out = {}
            for d in self.days:
                r = solve_timeseries(net, self.inputs.profiles, d, ev[year][d], shunt_kvar=shunts,
                                     base_kw=self.base_kw[d], tol=self.config.tolerance,
                                     max_iter=self.config.max_iter)
                self._track_balance(r)
                out[d] = r
            return out
        return simulate

    def _track_balance(self, r) -> None:
        f = r.flow
        src = f.source_power
        scale = np.maximum(np.abs(src), 1e-12)
        full = np.abs(src - f.load_power - (f.losses_kw + 1j * f.losses_kvar)) / scale
        head = np.abs(src.real - r.base_kw - r.ev_kw - f.losses_kw) / scale
        self.balance_error = max(self.balance_error, float(full.max(initial=0.0)), float(head.max(initial=0.0)))


def _ev_digest(ev) -> str:
    h = hashlib.sha256()
    for y in sorted(ev):
        for d in sorted(ev[y]):
            for b in sorted(ev[y][d]):
                h.update(f"{y}|{d}|{b}|".encode())
                h.update(np.ascontiguousarray(ev[y][d][b]).tobytes())
    return h.hexdigest()


@dataclass
class CellResult:
    feeder_id: str
    strategy: str
    scenario: int
    years: list[int]
    peak_kw: dict[int, float]                 # annual max feeder-head kW before upgrades
    overloaded: dict[int, int]                # transformers overloaded in each year
    trend: dict[int, float]                   # cumulative % of transformers overloaded
    transformer_count: int
    plan: list[UpgradeAction]
    violations: list[ViolationRecord]
    residuals: list[ViolationRecord]
    costs: CostStream
    npv_usd: float
    profiles: dict[str, dict[str, list[float]]]   # final year: day -> base/ev/head kW
    v_before: dict[str, float]                # worst bus voltage over the horizon
    v_after: dict[str, float]
    max_loading_after: float
    balance_error: float

    @property
    def final_peak_kw(self) -> float:
        return self.peak_kw[self.years[-1]]

    @property
    def overloaded_total(self) -> int:
        return len({v.component_id for v in self.violations if v.kind == "transformer_overload"})

    def added(self, action: str) -> float:
        return float(sum(a.new_rating - a.old_rating for a in self.plan if a.action == action))

    @property
    def min_v_after(self) -> float:
        return min(self.v_after.values())


def run_feeder(feeder: Feeder, config: StudyConfig, inputs: Inputs | None = None) -> list[CellResult]:
    """Every configured (strategy, scenario) cell for one feeder."""
    inputs = inputs or Inputs.resolve(config)
    fs = FeederStudy(feeder, config, inputs)
    done: dict[str, CellResult] = {}
    cells = []
    for strategy in config.strategies:
        for scenario in config.scenarios:
            try:
                ev = fs.ev_load(strategy, scenario)
                key = _ev_digest(ev)
                if key not in done:
                    done[key] = _run_cell(fs, ev, strategy, scenario)
                cells.append(replace(done[key], strategy=strategy, scenario=scenario))
            except Exception as exc:
                raise StudyError(f"feeder {feeder.id}, strategy {strategy}, scenario {scenario}: {exc}") from exc
    return cells


def _run_cell(fs: FeederStudy, ev, strategy: str, scenario: int) -> CellResult:
    cfg = fs.config
    fs.balance_error = 0.0
    sim = PlanSimulator(fs.feeder, fs.simulator(ev), fs.years, cfg.limits)
    pr = plan_upgrades(sim, cfg.line_ladder, cfg.capacitor_ladder, fs.inputs.cost_table)
    years = fs.years
    base = pr.baseline
    peak = {y: max(float(r.source_kw.max()) for r in base[y].values()) for y in years}
    per_year = defaultdict(set)
    for v in pr.violations:
        if v.kind == "transformer_overload":
            per_year[v.year].add(v.component_id)
    n_tx = len(fs.feeder.transformers)
    costs = cost_plan(pr.plan, fs.inputs.cost_table, years)
    last = years[-1]
    profiles = {d: {"base_kw": r.base_kw.tolist(), "ev_kw": r.ev_kw.tolist(), "head_kw": r.source_kw.tolist()}
                for d, r in base[last].items()}
    after = sim.all_years(pr.plan)
    return CellResult(
        feeder_id=fs.feeder.id, strategy=strategy, scenario=scenario, years=years,
        peak_kw=peak, overloaded={y: len(per_year[y]) for y in years},
        trend=overload_trend(pr.violations, n_tx, years), transformer_count=n_tx,
        plan=pr.plan, violations=pr.violations, residuals=pr.report.residuals,
        costs=costs, npv_usd=npv(costs, cfg.discount_rate, base_year=years[0]),
        profiles=profiles, v_before=_worst_voltage(base), v_after=_worst_voltage(after),
        max_loading_after=max(pr.report.max_loading.values()), balance_error=fs.balance_error,
    )


def _worst_voltage(results) -> dict[str, float]:
    out: dict[str, float] = {}
    for res in results.values():
        for r in res.values():
            for b, v in r.min_voltage.items():
                out[b] = min(v, out.get(b, math.inf))
    return out


# ---------------------------------------------------------------------------
# whole study


@dataclass
class StudyResult:
    config: StudyConfig
    cells: list[CellResult]
    table: list[dict] = field(default_factory=list)

    def cell(self, feeder_id: str, strategy: str, scenario: int) -> CellResult:
        for c in self.cells:
            if (c.feeder_id, c.strategy, c.scenario) == (feeder_id, strategy, scenario):
                return c
        raise KeyError((feeder_id, strategy, scenario))


def _worker(args):
    feeder, config, inputs = args
    return run_feeder(feeder, config, inputs)


def run_study(feeders: Sequence[Feeder], config: StudyConfig, jobs: int | None = None,
              inputs: Inputs | None = None) -> StudyResult:
    config.check()
    inputs = inputs or Inputs.resolve(config)
    jobs = max(1, jobs or os.cpu_count() or 1)
    work = [(f, config, inputs) for f in feeders]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            per_feeder = list(pool.map(_worker, work))
    else:
        per_feeder = [_worker(w) for w in work]
    cells = [c for group in per_feeder for c in group]
    result = StudyResult(config, cells)
    if config.baseline_scenario in config.scenarios and config.compare_scenario in config.scenarios:
        result.table = compute_table(cells, config.baseline_scenario, config.compare_scenario, config.round_digits)
    return result


TABLE_COLUMNS = ("feeder_id", "strategy", "peak_load_reduction_pct", "overload_count_reduction_pct",
                 "transformer_cost_reduction_pct", "line_cost_reduction_pct", "npv_reduction_pct")


def compute_table(cells: Sequence[CellResult], baseline: int = 1, compare: int = 4,
                  digits: int | None = 2) -> list[dict]:
    """Percentage reductions of ``compare`` against ``baseline`` per feeder and strategy."""
    index = {(c.feeder_id, c.strategy, c.scenario): c for c in cells}
    rows = []
    for (fid, strat, sc), c in sorted(index.items()):
        if sc != compare:
            continue
        b = index.get((fid, strat, baseline))
        if b is None:
            raise KeyError(f"missing scenario-{baseline} baseline for {fid}/{strat}")
        vals = [reduction_pct(b.final_peak_kw, c.final_peak_kw),
                reduction_pct(b.overloaded_total, c.overloaded_total),
                reduction_pct(b.costs.category_total("transformer"), c.costs.category_total("transformer")),
                reduction_pct(b.costs.category_total("line"), c.costs.category_total("line")),
                reduction_pct(b.npv_usd, c.npv_usd)]
        if digits is not None:
            vals = [round(v, digits) for v in vals]
        rows.append(dict(zip(TABLE_COLUMNS, [fid, strat, *vals])))
    return rows


# ---------------------------------------------------------------------------
# artifacts

METRIC_COLUMNS = ("feeder_id", "year", "peak_load_kw", "overloaded_transformers", "cumulative_overloaded_pct",
                  "upgrade_cost_usd", "transformer_cost_usd", "line_cost_usd", "capacitor_cost_usd")
SUMMARY_COLUMNS = ("feeder_id", "peak_load_kw", "overloaded_transformers", "transformer_kva_added",
                   "line_amps_added", "capacitor_kvar_added", "transformer_cost_usd", "line_cost_usd",
                   "capacitor_cost_usd", "total_cost_usd", "npv_usd", "actions", "residual_violations")


def _f(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.6f}"


def _write(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _cell_name(c: CellResult) -> str:
    return f"{c.feeder_id}__{c.strategy}__s{c.scenario}"


def write_metrics(result: StudyResult, out: Path) -> None:
    """One metrics file and one summary file per (strategy, scenario); no strategy column,
    so equal cells give equal bytes."""
    groups = defaultdict(list)
    for c in result.cells:
        groups[(c.strategy, c.scenario)].append(c)
    for strat in result.config.strategies:
        for sc in result.config.scenarios:
            cells = sorted(groups[(strat, sc)], key=lambda c: c.feeder_id)
            rows, summary = [], []
            for c in cells:
                cat = c.costs.by_category
                for y in c.years:
                    rows.append([c.feeder_id, y, _f(c.peak_kw[y]), c.overloaded[y], _f(c.trend[y]),
                                 _f(c.costs.costs.get(y, 0.0)), _f(cat.get("transformer", {}).get(y, 0.0)),
                                 _f(cat.get("line", {}).get(y, 0.0)), _f(cat.get("capacitor", {}).get(y, 0.0))])
                summary.append([c.feeder_id, _f(c.final_peak_kw), c.overloaded_total,
                                _f(c.added("resize_transformer")), _f(c.added("resize_line")),
                                _f(c.added("add_capacitor")), _f(c.costs.category_total("transformer")),
                                _f(c.costs.category_total("line")), _f(c.costs.category_total("capacitor")),
                                _f(c.costs.total), _f(c.npv_usd), len(c.plan), len(c.residuals)])
            _write(out / "metrics" / f"{strat}_scenario{sc}.csv", METRIC_COLUMNS, rows)
            _write(out / "metrics" / f"{strat}_scenario{sc}_summary.csv", SUMMARY_COLUMNS, summary)


def write_table(rows: Sequence[dict], path: Path) -> None:
    _write(path, TABLE_COLUMNS, [[r["feeder_id"], r["strategy"], *[_f(float(r[k])) for k in TABLE_COLUMNS[2:]]]
                                 for r in rows])


def emit_plot_data(cells: Sequence[CellResult], out: Path) -> list[Path]:
    """Tidy CSVs for load-profile overlays, upgrade capacity, overload trends,
    voltage profiles, and NPV bars. Load profiles are final-year, before upgrades."""
    cells = sorted(cells, key=lambda c: (c.feeder_id, c.strategy, c.scenario))
    key = lambda c: [c.feeder_id, c.strategy, c.scenario]
    files = {
        "load_profiles.csv": (("feeder_id", "strategy", "scenario", "day_type", "hour", "base_kw", "ev_kw",
                               "head_kw"),
                              [key(c) + [d, h, _f(p["base_kw"][h]), _f(p["ev_kw"][h]), _f(p["head_kw"][h])]
                               for c in cells for d, p in c.profiles.items() for h in range(24)]),
        "upgrade_capacity.csv": (("feeder_id", "strategy", "scenario", "category", "added_capacity", "unit",
                                  "cost_usd"),
                                 [key(c) + [cat, _f(c.added(act)), unit, _f(c.costs.category_total(cat))]
                                  for c in cells for cat, act, unit in
                                  (("transformer", "resize_transformer", "kVA"), ("line", "resize_line", "A"),
                                   ("capacitor", "add_capacitor", "kvar"))]),
        "overload_trend.csv": (("feeder_id", "strategy", "scenario", "year", "cumulative_overloaded_pct"),
                               [key(c) + [y, _f(c.trend[y])] for c in cells for y in c.years]),
        "voltage_profiles.csv": (("feeder_id", "strategy", "scenario", "bus_id", "min_v_before_pu",
                                  "min_v_after_pu"),
                                 [key(c) + [b, _f(c.v_before[b]), _f(c.v_after[b])] for c in cells
                                  for b in c.v_before]),
        "npv.csv": (("feeder_id", "strategy", "scenario", "npv_usd", "total_cost_usd"),
                    [key(c) + [_f(c.npv_usd), _f(c.costs.total)] for c in cells]),
    }
    paths = []
    for name, (header, rows) in files.items():
        _write(out / "plots" / name, header, rows)
        paths.append(out / "plots" / name)
    return paths


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_artifacts(result: StudyResult, out_dir, inputs: Sequence[str] = (), complete: bool = True) -> Path:
    """Write every run artifact plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(result, out)
    (out / "plans").mkdir(exist_ok=True)
    (out / "violations").mkdir(exist_ok=True)
    for c in result.cells:
        write_plan_csv(c.plan, out / "plans" / f"{_cell_name(c)}.csv")
        write_violations_csv(c.violations, out / "violations" / f"{_cell_name(c)}.csv")
    write_table(result.table, out / "table.csv")
    emit_plot_data(result.cells, out)
    return write_manifest(result.config, out, inputs, complete)


def write_manifest(config: StudyConfig, out: Path, inputs: Sequence[str] = (), complete: bool = True) -> Path:
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "tool": "evgrid",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "config_sha256": config.digest(),
        "config": config.to_dict(),
        "seed": config.seed,
        "complete": complete,
        "inputs": {str(p): sha256_file(p) for p in sorted(set(inputs)) if Path(p).is_file()},
        "outputs": [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p)} for p in outputs],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_feeders(paths: Sequence[str]) -> list[Feeder]:
    """Load feeder files; a directory contributes every ``*.json`` inside it, sorted."""
    out = []
    for p in paths:
        p = Path(p)
        out.extend(load_feeder(f) for f in (sorted(p.glob("*.json")) if p.is_dir() else [p]))
    return out


def input_files(config: StudyConfig) -> list[str]:
    files = []
    for p in config.feeders:
        p = Path(p)
        files.extend(str(f) for f in (sorted(p.glob("*.json")) if p.is_dir() else [p]))
    files += [x for x in (config.profiles, config.behavior, config.cost_table) if x]
    if config.sessions_dir:
        files += [str(f) for f in sorted(Path(config.sessions_dir).glob("*.csv"))]
    return files

"""EV sessions, the three charging strategies, enrollment scenarios and a session generator.

Sessions live on a 48-hour index so that an evening plug-in may run past midnight;
hour ``h`` of the schedule falls on hour-of-day ``h % 24`` of the same representative
day when loads are aggregated.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .grid import Feeder

log = logging.getLogger(__name__)

HORIZON = 48
TOU_WINDOW = (17, 21)
SCENARIO_TARGETS = {1: 0.0, 2: 0.10, 3: 0.30, 4: 0.50}
STUDY_START, STUDY_END = 2022, 2035
_EPS_KW = 1e-6


@dataclass(frozen=True)
class EVSession:
    session_id: str
    bus: str
    plugin_hour: int
    duration_h: int
    energy_kwh: float
    max_power_kw: float
    enrolled: bool = False
    vehicle_id: str = ""

    def __post_init__(self):
        if not 0 <= self.plugin_hour < 24:
            raise ValueError(f"{self.session_id}: plugin_hour must be in 0..23")
        if not 1 <= self.duration_h <= 24:
            raise ValueError(f"{self.session_id}: duration_h must be in 1..24")
        if self.energy_kwh < 0:
            raise ValueError(f"{self.session_id}: energy_kwh must be >= 0")
        if not self.max_power_kw > 0:
            raise ValueError(f"{self.session_id}: max_power_kw must be > 0")
        if not self.vehicle_id:
            object.__setattr__(self, "vehicle_id", self.session_id)

    @property
    def depart_hour(self) -> int:
        """Exclusive end on the 48-hour index."""
        return self.plugin_hour + self.duration_h

    @property
    def hours(self) -> range:
        return range(self.plugin_hour, self.depart_hour)

    @property
    def deliverable_kwh(self) -> float:
        return min(self.energy_kwh, self.max_power_kw * self.duration_h)


@dataclass
class ChargingSchedule:
    session_id: str
    bus: str
    power_kw: np.ndarray          # (HORIZON,)
    unmet_kwh: float

    @property
    def delivered_kwh(self) -> float:
        return float(self.power_kw.sum())

    def daily(self) -> np.ndarray:
        """Fold the 48-hour allocation onto the 24 hours of the representative day."""
        return self.power_kw[:24] + self.power_kw[24:]


def _asap(session: EVSession, blocked: Iterable[int] = ()) -> ChargingSchedule:
    blocked = set(blocked)
    power = np.zeros(HORIZON)
    remaining = session.energy_kwh
    for h in session.hours:
        if remaining <= 0:
            break
        if h % 24 in blocked:
            continue
        p = min(session.max_power_kw, remaining)
        power[h] = p
        remaining -= p
    return ChargingSchedule(session.session_id, session.bus, power, session.energy_kwh - float(power.sum()))


def unmanaged_schedule(session: EVSession) -> ChargingSchedule:
    """Full power from plug-in until the energy is met or the vehicle leaves."""
    return _asap(session)


def tou_schedule(session: EVSession, window: tuple[int, int] = TOU_WINDOW) -> ChargingSchedule:
    """Unmanaged charging with a pause over ``[start, end)`` for enrolled vehicles.

    Energy still owed at departure is recorded as unmet rather than extending the stay.
    """
    if not session.enrolled:
        return _asap(session)
    return _asap(session, range(window[0], window[1]))


# ---------------------------------------------------------------------------
# load balancing


@dataclass
class LoadBalanceResult:
    schedules: list[ChargingSchedule]
    breach_hours: list[int]        # hours of day where base + EV exceeds threshold * rating
    feasible: bool                 # a zero-breach allocation was found
    limit_kw: float

    @property
    def breached(self) -> bool:
        return bool(self.breach_hours)


def breach_hours(base_kw: np.ndarray, schedules: Sequence[ChargingSchedule], limit: float) -> list[int]:
    total = np.asarray(base_kw, dtype=float) + sum((s.daily() for s in schedules), np.zeros(24))
    return [h for h in range(24) if total[h] > limit + _EPS_KW]


def _edf_key(s: EVSession):
    return (s.depart_hour, s.plugin_hour, s.session_id)


def _greedy(sessions: list[EVSession], headroom: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """EDF order, each session as early as the remaining headroom allows."""
    room = np.maximum(headroom, 0.0).copy()
    x = np.zeros((len(sessions), HORIZON))
    short = np.zeros(len(sessions))
    for k, s in enumerate(sessions):
        remaining = s.deliverable_kwh
        for h in s.hours:
            if remaining <= 0:
                break
            p = min(s.max_power_kw, room[h % 24], remaining)
            if p > 0:
                x[k, h] = p
                room[h % 24] -= p
                remaining -= p
        short[k] = max(remaining, 0.0)
    return x, short


def _lp(sessions: list[EVSession], cap: np.ndarray, penalty: np.ndarray) -> np.ndarray | None:
    """Allocation meeting every deliverable need with per-hour-of-day caps, or None.

    Objective prefers early hours (ties to unmanaged behaviour) plus ``penalty[hour_of_day]``.
    """
    var = [(k, h) for k, s in enumerate(sessions) for h in s.hours]
    if not var:
        return np.zeros((len(sessions), HORIZON))
    n = len(var)
    c = np.array([(h - sessions[k].plugin_hour) / HORIZON + penalty[h % 24] for k, h in var])
    a_eq = np.zeros((len(sessions), n))
    a_ub = np.zeros((24, n))
    for j, (k, h) in enumerate(var):
        a_eq[k, j] = 1.0
        a_ub[h % 24, j] = 1.0
    b_eq = np.array([s.deliverable_kwh for s in sessions])
    finite = np.isfinite(cap)
    bounds = [(0.0, sessions[k].max_power_kw) for k, _ in var]
    res = linprog(c, A_ub=a_ub[finite], b_ub=np.maximum(cap[finite], 0.0), A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status != 0:
        return None
    x = np.zeros((len(sessions), HORIZON))
    for j, (k, h) in enumerate(var):
        x[k, h] = min(max(res.x[j], 0.0), sessions[k].max_power_kw)
    # trim solver round-off so each session delivers exactly its need
    for k, s in enumerate(sessions):
        excess = x[k].sum() - s.deliverable_kwh
        if excess > 0:
            for h in reversed(s.hours):
                cut = min(excess, x[k, h])
                x[k, h] -= cut
                excess -= cut
                if excess <= 0:
                    break
    return x


def _late_fill(sessions: list[EVSession], x: np.ndarray, short: np.ndarray) -> np.ndarray:
    """Push each session's shortfall into its latest hours at up to full power."""
    x = x.copy()
    for k, s in enumerate(sessions):
        remaining = short[k]
        for h in reversed(s.hours):
            if remaining <= 0:
                break
            p = min(s.max_power_kw - x[k, h], remaining)
            if p > 0:
                x[k, h] += p
                remaining -= p
    return x


def lb_schedule(sessions: Sequence[EVSession], rating_kva: float, base_kw: np.ndarray,
                threshold: float = 0.9) -> LoadBalanceResult:
    """Reschedule the enrolled sessions on one asset to stay under ``threshold * rating``.

    Non-enrolled sessions charge unmanaged and count as fixed load. Enrolled sessions
    are placed earliest-deadline-first, each as early as the remaining headroom allows.
    If that greedy pass strands energy, an LP over the same hours looks for any
    zero-breach allocation. When none exists the energy is still delivered: the
    shortfall goes into each session's latest hours, and if that would breach more
    hours than unmanaged charging does, the overflow is confined to the hours that
    unmanaged charging already breaches.
    """
    base = np.asarray(base_kw, dtype=float)
    if base.shape != (24,):
        raise ValueError("base_kw must have 24 hourly values")
    limit = threshold * rating_kva
    fixed = [unmanaged_schedule(s) for s in sessions if not s.enrolled]
    flexible = sorted((s for s in sessions if s.enrolled), key=_edf_key)
    fixed_load = base + sum((f.daily() for f in fixed), np.zeros(24))
    headroom = limit - fixed_load

    def finish(x):
        out = {f.session_id: f for f in fixed}
        for k, s in enumerate(flexible):
            out[s.session_id] = ChargingSchedule(s.session_id, s.bus, x[k], s.energy_kwh - float(x[k].sum()))
        ordered = [out[s.session_id] for s in sessions]
        return ordered, breach_hours(base, ordered, limit)

    x, short = _greedy(flexible, headroom)
    if not short.any() or short.max() <= 1e-9:
        scheds, br = finish(x)
        return LoadBalanceResult(scheds, br, not br or _only_fixed(br, fixed_load, limit), limit)

    x_lp = _lp(flexible, headroom.copy(), np.zeros(24))
    if x_lp is not None:
        scheds, br = finish(x_lp)
        return LoadBalanceResult(scheds, br, True, limit)

    unmanaged_br = breach_hours(base, [unmanaged_schedule(s) for s in sessions], limit)
    scheds, br = finish(_late_fill(flexible, x, short))
    if len(br) <= len(unmanaged_br):
        return LoadBalanceResult(scheds, br, False, limit)

    # overflow only where unmanaged charging already breaches
    cap = np.maximum(headroom, 0.0)
    penalty = np.zeros(24)
    for h in unmanaged_br:
        cap[h] = np.inf
        penalty[h] = 10.0
    x_lp = _lp(flexible, cap, penalty)
    if x_lp is None:  # pragma: no cover - unmanaged allocation is always feasible here
        raise RuntimeError("load balancing fallback infeasible")
    scheds, br = finish(x_lp)
    return LoadBalanceResult(scheds, br, False, limit)


def _only_fixed(br: list[int], fixed_load: np.ndarray, limit: float) -> bool:
    # breaches caused by base and non-enrolled load alone are outside LB's control
    return all(fixed_load[h] > limit + _EPS_KW for h in br)


# ---------------------------------------------------------------------------
# enrollment


@dataclass(frozen=True)
class EnrollmentTrajectory:
    """Enrollment rising linearly from zero in the first year to the scenario target."""

    scenario: int
    start_year: int = STUDY_START
    end_year: int = STUDY_END

    def __post_init__(self):
        if self.scenario not in SCENARIO_TARGETS:
            raise ValueError(f"scenario must be one of {sorted(SCENARIO_TARGETS)}")
        if self.end_year <= self.start_year:
            raise ValueError("end_year must be after start_year")

    @property
    def target_rate(self) -> float:
        return SCENARIO_TARGETS[self.scenario]

    def rate(self, year: int) -> float:
        frac = (year - self.start_year) / (self.end_year - self.start_year)
        return self.target_rate * min(max(frac, 0.0), 1.0)

    def rates(self) -> dict[int, float]:
        return {y: self.rate(y) for y in range(self.start_year, self.end_year + 1)}


def vehicle_draw(vehicle_id: str, seed: int) -> float:
    """Stable uniform [0, 1) draw for a vehicle, independent of fleet order and size."""
    digest = hashlib.blake2b(f"{seed}:{vehicle_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0 ** 64


def apply_enrollment(sessions: Iterable[EVSession], trajectory: EnrollmentTrajectory, year: int,
                     seed: int) -> list[EVSession]:
    rate = trajectory.rate(year)
    return [replace(s, enrolled=vehicle_draw(s.vehicle_id, seed) < rate) for s in sessions]


# ---------------------------------------------------------------------------
# synthetic sessions


@dataclass(frozen=True)
class NormalSpec:
    mean: float
    sd: float
    low: float
    high: float

    def check(self, name: str) -> None:
        if self.sd < 0 or not self.low <= self.high or not all(map(math.isfinite, (self.mean, self.sd))):
            raise ValueError(f"{name}: invalid distribution parameters {self}")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.clip(rng.normal(self.mean, self.sd, n), self.low, self.high)


def _normal(d: Mapping | NormalSpec, name: str) -> NormalSpec:
    if isinstance(d, NormalSpec):
        return d
    try:
        return NormalSpec(float(d["mean"]), float(d["sd"]), float(d.get("low", -math.inf)),
                          float(d.get("high", math.inf)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{name}: expected mapping with mean/sd[/low/high]: {exc}") from None


@dataclass(frozen=True)
class ClassBehavior:
    plugin_hour: NormalSpec
    dwell_h: NormalSpec


@dataclass(frozen=True)
class BehaviorSpec:
    """Parametric charging-behavior model: plug-in times, dwell, energy, and charger mix."""

    class_weights: Mapping[str, float]
    classes: Mapping[str, ClassBehavior]
    energy_kwh: NormalSpec
    charger_kw: Mapping[float, float]
    day_energy_scale: Mapping[str, float] = field(default_factory=dict)
    # "share": class_weights are session shares among classes present on the feeder;
    # "per_kw": they are per-kW propensities, so shares follow each class's connected load
    weighting: str = "share"

    @classmethod
    def from_dict(cls, d: Mapping) -> "BehaviorSpec":
        try:
            classes = {
                name: ClassBehavior(_normal(v["plugin_hour"], f"{name}.plugin_hour"),
                                    _normal(v["dwell_h"], f"{name}.dwell_h"))
                for name, v in d["classes"].items()
            }
            spec = cls(
                class_weights={str(k): float(v) for k, v in d["class_weights"].items()},
                classes=classes,
                energy_kwh=_normal(d["energy_kwh"], "energy_kwh"),
                charger_kw={float(k): float(v) for k, v in d["charger_kw"].items()},
                day_energy_scale={str(k): float(v) for k, v in d.get("day_energy_scale", {}).items()},
                weighting=str(d.get("weighting", "share")),
            )
        except (KeyError, AttributeError) as exc:
            raise ValueError(f"behavior spec: missing or malformed entry {exc}") from None
        spec.check()
        return spec

    def check(self) -> None:
        if not self.class_weights or any(w < 0 for w in self.class_weights.values()):
            raise ValueError("class_weights must be non-empty and non-negative")
        if sum(self.class_weights.values()) <= 0:
            raise ValueError("class_weights must not all be zero")
        for name in self.class_weights:
            if name not in self.classes:
                raise ValueError(f"no behavior given for class {name!r}")
        for name, c in self.classes.items():
            c.plugin_hour.check(f"{name}.plugin_hour")
            c.dwell_h.check(f"{name}.dwell_h")
        self.energy_kwh.check("energy_kwh")
        if self.energy_kwh.low < 0:
            raise ValueError("energy_kwh.low must be >= 0")
        if not self.charger_kw or any(p <= 0 for p in self.charger_kw) or any(
                w < 0 for w in self.charger_kw.values()):
            raise ValueError("charger_kw must map positive powers to non-negative weights")
        if abs(sum(self.charger_kw.values()) - 1.0) > 1e-9:
            raise ValueError("charger_kw weights must sum to 1")
        if any(v <= 0 for v in self.day_energy_scale.values()):
            raise ValueError("day_energy_scale factors must be > 0")
        if self.weighting not in ("share", "per_kw"):
            raise ValueError("weighting must be 'share' or 'per_kw'")


DEFAULT_BEHAVIOR = {
    "class_weights": {"residential": 0.8, "commercial": 0.2},
    "classes": {
        "residential": {"plugin_hour": {"mean": 18.0, "sd": 2.0, "low": 0, "high": 23},
                        "dwell_h": {"mean": 12.0, "sd": 2.5, "low": 1, "high": 24}},
        "commercial": {"plugin_hour": {"mean": 9.0, "sd": 1.5, "low": 0, "high": 23},
                       "dwell_h": {"mean": 7.0, "sd": 2.0, "low": 1, "high": 24}},
    },
    "energy_kwh": {"mean": 14.0, "sd": 6.0, "low": 2.0, "high": 60.0},
    "charger_kw": {"3.3": 0.15, "7.2": 0.7, "11.5": 0.15},
    "day_energy_scale": {"winter": 1.15, "summer": 1.05, "shoulder": 1.0},
}


def generate_sessions(feeder: Feeder, count: int, behavior: BehaviorSpec, seed: int,
                      day_type: str = "summer", prefix: str = "ev") -> list[EVSession]:
    """Draw ``count`` charging sessions for one representative day.

    A session's class is drawn from ``class_weights`` restricted to classes present
    on the feeder (scaled by each class's connected kW under ``per_kw`` weighting),
    then a load point of that class is picked with probability proportional to its
    peak demand. A feeder with no load of any weighted class hosts no sessions.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    behavior.check()
    if count == 0:
        return []
    by_class = defaultdict(list)
    for ld in feeder.loads:
        if ld.customer_class in behavior.class_weights and ld.peak_kw > 0:
            by_class[ld.customer_class].append(ld)
    present = [c for c in behavior.class_weights if by_class[c] and behavior.class_weights[c] > 0]
    if not present:
        log.warning("feeder %s has no load points of classes %s; no sessions drawn",
                    feeder.id, list(behavior.class_weights))
        return []
    day_salt = int.from_bytes(hashlib.blake2b(day_type.encode(), digest_size=4).digest(), "big")
    rng = np.random.default_rng([seed, day_salt])
    w = np.array([behavior.class_weights[c] for c in present])
    if behavior.weighting == "per_kw":
        w = w * np.array([sum(ld.peak_kw for ld in by_class[c]) for c in present])
    cls_idx = rng.choice(len(present), size=count, p=w / w.sum())
    u_load = rng.random(count)
    energy = behavior.energy_kwh.draw(rng, count) * behavior.day_energy_scale.get(day_type, 1.0)
    powers = np.array(sorted(behavior.charger_kw))
    pw = np.array([behavior.charger_kw[p] for p in powers])
    charger = powers[rng.choice(len(powers), size=count, p=pw / pw.sum())]
    plug = {c: behavior.classes[c].plugin_hour.draw(rng, count) for c in present}
    dwell = {c: behavior.classes[c].dwell_h.draw(rng, count) for c in present}

    out = []
    for i in range(count):
        c = present[cls_idx[i]]
        loads = by_class[c]
        cum = np.cumsum([ld.peak_kw for ld in loads])
        ld = loads[min(int(np.searchsorted(cum, u_load[i] * cum[-1], side="right")), len(loads) - 1)]
        vid = f"{prefix}{i:05d}"
        out.append(EVSession(
            session_id=vid, bus=ld.bus,
            plugin_hour=int(round(plug[c][i])) % 24,
            duration_h=int(min(max(round(dwell[c][i]), 1), 24)),
            energy_kwh=round(float(energy[i]), 3),
            max_power_kw=float(charger[i]),
            vehicle_id=vid,
        ))
    return out


def aggregate_ev_load(schedules: Iterable[ChargingSchedule]) -> dict[str, np.ndarray]:
    """Per-bus 24-hour EV demand, kW."""
    out: dict[str, np.ndarray] = {}
    for s in schedules:
        if s.bus not in out:
            out[s.bus] = np.zeros(24)
        out[s.bus] += s.daily()
    return out


# ---------------------------------------------------------------------------
# session files

SESSION_COLUMNS = ("session_id", "bus", "plugin_hour", "duration_h", "energy_kwh", "max_power_kw")


def write_sessions_csv(sessions: Iterable[EVSession], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SESSION_COLUMNS)
        for s in sessions:
            w.writerow([s.session_id, s.bus, s.plugin_hour, s.duration_h, repr(s.energy_kwh),
                        repr(s.max_power_kw)])


def read_sessions_csv(path) -> list[EVSession]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SESSION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(EVSession(row["session_id"], row["bus"], int(row["plugin_hour"]),
                                     int(row["duration_h"]), float(row["energy_kwh"]),
                                     float(row["max_power_kw"])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out

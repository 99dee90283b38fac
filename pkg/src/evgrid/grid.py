"""Radial feeder data model, validation, JSON schema I/O and a synthetic generator."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

PHASES = ("A", "B", "C")
CUSTOMER_CLASSES = ("residential", "commercial", "industrial", "mixed")

# standard distribution transformer sizes, kVA
SINGLE_PHASE_LADDER_KVA = (10.0, 15.0, 25.0, 37.5, 50.0, 75.0, 100.0, 167.0)
THREE_PHASE_LADDER_KVA = (75.0, 150.0, 225.0, 300.0, 500.0, 750.0, 1000.0, 1500.0, 2500.0)


def transformer_ladder(phase_count: int) -> tuple[float, ...]:
    """Size ladder for a transformer bank with ``phase_count`` phases."""
    if phase_count == 3:
        return THREE_PHASE_LADDER_KVA
    # a two-phase bank is two single-phase units
    return tuple(s * phase_count for s in SINGLE_PHASE_LADDER_KVA)


def _phases(value: Iterable[str]) -> tuple[str, ...]:
    value = tuple(value)
    if all(p in PHASES for p in value):
        return tuple(sorted(set(value), key=PHASES.index))
    return value  # left as-is so validate() can report it


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    nominal_voltage_kv: float  # line-to-neutral
    is_source: bool = False

    def __post_init__(self):
        object.__setattr__(self, "phases", _phases(self.phases))


@dataclass(frozen=True)
class LineSegment:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    resistance_ohm_per_mi: float
    reactance_ohm_per_mi: float
    length_mi: float
    ampacity_a: float

    def __post_init__(self):
        object.__setattr__(self, "phases", _phases(self.phases))

    @property
    def impedance_ohm(self) -> complex:
        return complex(self.resistance_ohm_per_mi, self.reactance_ohm_per_mi) * self.length_mi


@dataclass(frozen=True)
class Transformer:
    id: str
    from_bus: str
    to_bus: str
    phase_count: int
    rating_kva: float
    impedance_pct: float
    secondary_voltage_kv: float


@dataclass(frozen=True)
class LoadPoint:
    id: str
    bus: str
    customer_class: str
    peak_kw: float
    power_factor: float
    profile_id: str

    @property
    def kvar_per_kw(self) -> float:
        return math.tan(math.acos(self.power_factor))


@dataclass(frozen=True)
class Violation:
    component_id: str
    kind: str
    message: str

    def __str__(self):
        return f"{self.component_id}: {self.kind}: {self.message}"


@dataclass(frozen=True)
class Feeder:
    """A radial feeder. Immutable; derived topology is cached on first use."""

    id: str
    buses: tuple[Bus, ...]
    lines: tuple[LineSegment, ...] = ()
    transformers: tuple[Transformer, ...] = ()
    loads: tuple[LoadPoint, ...] = ()

    def __post_init__(self):
        for name in ("buses", "lines", "transformers", "loads"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @cached_property
    def bus_map(self) -> dict[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def transformer_map(self) -> dict[str, Transformer]:
        return {t.id: t for t in self.transformers}

    @cached_property
    def line_map(self) -> dict[str, LineSegment]:
        return {ln.id: ln for ln in self.lines}

    @property
    def branches(self) -> tuple[LineSegment | Transformer, ...]:
        return self.lines + self.transformers

    @cached_property
    def source(self) -> Bus:
        sources = [b for b in self.buses if b.is_source]
        if len(sources) != 1:
            raise ValueError(f"feeder {self.id} has {len(sources)} source buses")
        return sources[0]

    @cached_property
    def tree(self) -> "Tree":
        return Tree.build(self)

    def serving_transformer(self, bus_id: str) -> Transformer | None:
        """Nearest transformer upstream of ``bus_id`` (inclusive of its own feed)."""
        tree = self.tree
        node = bus_id
        while node != tree.root:
            branch = tree.parent_branch[node]
            if isinstance(branch, Transformer):
                return branch
            node = tree.parent[node]
        return None

    def with_transformer(self, tid: str, **changes) -> "Feeder":
        return replace(self, transformers=tuple(
            replace(t, **changes) if t.id == tid else t for t in self.transformers))

    def with_line(self, lid: str, **changes) -> "Feeder":
        return replace(self, lines=tuple(
            replace(ln, **changes) if ln.id == lid else ln for ln in self.lines))


@dataclass
class Tree:
    """Source-rooted orientation of a radial feeder."""

    root: str
    order: list[str]                       # BFS order, root first
    parent: dict[str, str]
    parent_branch: dict[str, LineSegment | Transformer]
    children: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def build(cls, feeder: Feeder) -> "Tree":
        adj: dict[str, list[tuple[str, LineSegment | Transformer]]] = {b.id: [] for b in feeder.buses}
        for br in feeder.branches:
            if br.from_bus in adj and br.to_bus in adj:
                adj[br.from_bus].append((br.to_bus, br))
                adj[br.to_bus].append((br.from_bus, br))
        root = feeder.source.id
        order, parent, pbranch = [root], {}, {}
        children: dict[str, list[str]] = {b.id: [] for b in feeder.buses}
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, br in adj[u]:
                if v in seen:
                    continue
                seen.add(v)
                parent[v] = u
                pbranch[v] = br
                children[u].append(v)
                order.append(v)
                queue.append(v)
        return cls(root, order, parent, pbranch, children)

    def path_to_root(self, bus_id: str) -> list[str]:
        path = [bus_id]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        return path


# ---------------------------------------------------------------------------
# validation


def validate(feeder: Feeder) -> list[Violation]:
    """Return every invariant breach found in ``feeder``; an empty list means valid."""
    out: list[Violation] = []

    def bad(cid, kind, msg):
        out.append(Violation(cid, kind, msg))

    for kind, items in (("bus", feeder.buses), ("line", feeder.lines),
                        ("transformer", feeder.transformers), ("load", feeder.loads)):
        seen = set()
        for it in items:
            if it.id in seen:
                bad(it.id, "duplicate id", f"{kind} id {it.id!r} appears more than once")
            seen.add(it.id)

    sources = [b for b in feeder.buses if b.is_source]
    if len(sources) != 1:
        bad(feeder.id, "source", f"expected exactly one source bus, found {len(sources)}")
    for b in feeder.buses:
        if not b.phases or any(p not in PHASES for p in b.phases):
            bad(b.id, "phases", f"phases must be a nonempty subset of ABC, got {b.phases}")
        if not b.nominal_voltage_kv > 0:
            bad(b.id, "voltage", "nominal_voltage_kv must be > 0")

    buses = feeder.bus_map
    dangling = False
    for ln in feeder.lines:
        ends = [buses.get(ln.from_bus), buses.get(ln.to_bus)]
        for name, b in zip((ln.from_bus, ln.to_bus), ends):
            if b is None:
                dangling = True
                bad(ln.id, "dangling reference", f"line references missing bus {name!r}")
        if not ln.ampacity_a > 0:
            bad(ln.id, "rating", "ampacity_a must be > 0")
        if not ln.length_mi > 0:
            bad(ln.id, "length", "length_mi must be > 0")
        if ln.resistance_ohm_per_mi < 0 or ln.reactance_ohm_per_mi < 0:
            bad(ln.id, "impedance", "series impedance components must be >= 0")
        if not ln.phases or any(p not in PHASES for p in ln.phases):
            bad(ln.id, "phases", f"phases must be a nonempty subset of ABC, got {ln.phases}")
        if all(ends):
            if not set(ln.phases) <= set(ends[0].phases) & set(ends[1].phases):
                bad(ln.id, "phases", "line phases must be a subset of both endpoint buses")
            if not math.isclose(ends[0].nominal_voltage_kv, ends[1].nominal_voltage_kv, rel_tol=1e-9):
                bad(ln.id, "voltage", "line endpoints have different nominal voltages")

    for t in feeder.transformers:
        ends = [buses.get(t.from_bus), buses.get(t.to_bus)]
        for name, b in zip((t.from_bus, t.to_bus), ends):
            if b is None:
                dangling = True
                bad(t.id, "dangling reference", f"transformer references missing bus {name!r}")
        if not t.rating_kva > 0:
            bad(t.id, "rating", "rating_kva must be > 0")
        if not 0 < t.impedance_pct < 20:
            bad(t.id, "impedance", "impedance_pct must lie in (0, 20)")
        if t.phase_count not in (1, 2, 3):
            bad(t.id, "phases", "phase_count must be 1, 2 or 3")
        if all(ends):
            prim, sec = ends
            if not t.secondary_voltage_kv < prim.nominal_voltage_kv:
                bad(t.id, "voltage", "secondary voltage must be below the primary bus voltage")
            if not math.isclose(t.secondary_voltage_kv, sec.nominal_voltage_kv, rel_tol=1e-9):
                bad(t.id, "voltage", "secondary_voltage_kv must equal the secondary bus nominal voltage")
            if len(sec.phases) != t.phase_count:
                bad(t.id, "phases", "secondary bus phase count must equal phase_count")
            if not set(sec.phases) <= set(prim.phases):
                bad(t.id, "phases", "secondary bus phases must be available at the primary bus")

    for ld in feeder.loads:
        if ld.bus not in buses:
            dangling = True
            bad(ld.id, "dangling reference", f"load references missing bus {ld.bus!r}")
        if ld.peak_kw < 0:
            bad(ld.id, "load", "peak_kw must be >= 0")
        if not 0 < ld.power_factor <= 1:
            bad(ld.id, "load", "power_factor must lie in (0, 1]")
        if ld.customer_class not in CUSTOMER_CLASSES:
            bad(ld.id, "load", f"unknown customer_class {ld.customer_class!r}")

    if len(sources) != 1 or dangling:
        return out

    # topology: radial iff connected with exactly n - 1 branches
    n_bus, n_branch = len(feeder.buses), len(feeder.branches)
    if n_branch != n_bus - 1:
        bad(feeder.id, "non-radial", f"{n_branch} branches for {n_bus} buses (radial needs {n_bus - 1})")
    tree = Tree.build(feeder)
    unreached = [b.id for b in feeder.buses if b.id not in tree.parent and b.id != tree.root]
    if unreached:
        bad(feeder.id, "disconnected", f"buses unreachable from source: {', '.join(unreached)}")
    if n_branch == n_bus - 1 and not unreached:
        for bus_id in tree.order[1:]:
            br = tree.parent_branch[bus_id]
            if isinstance(br, Transformer) and br.to_bus != bus_id:
                bad(br.id, "orientation", "transformer from_bus must be the source side")
            fed = set(br.phases) if isinstance(br, LineSegment) else set(buses[br.to_bus].phases)
            if not set(buses[bus_id].phases) <= fed:
                bad(bus_id, "phases", f"bus phases {buses[bus_id].phases} not all fed by {br.id}")
    return out


# ---------------------------------------------------------------------------
# serialization


class FeederFormatError(ValueError):
    pass


class FeederValidationError(ValueError):
    def __init__(self, feeder_id: str, violations: list[Violation]):
        self.violations = violations
        lines = "\n".join(f"  {v}" for v in violations)
        super().__init__(f"feeder {feeder_id} failed validation:\n{lines}")


_SCHEMA = {
    "buses": (Bus, {"is_source": False}),
    "lines": (LineSegment, {}),
    "transformers": (Transformer, {}),
    "loads": (LoadPoint, {}),
}


def _build(cls, record: Mapping, where: str, defaults: Mapping):
    if not isinstance(record, Mapping):
        raise FeederFormatError(f"{where}: expected an object, got {type(record).__name__}")
    kwargs = {}
    for f in fields(cls):
        if f.name in record:
            kwargs[f.name] = record[f.name]
        elif f.name in defaults:
            kwargs[f.name] = defaults[f.name]
        else:
            raise FeederFormatError(f"{where}: missing required field {f.name!r}")
    extra = set(record) - {f.name for f in fields(cls)}
    if extra:
        raise FeederFormatError(f"{where}: unknown field(s) {sorted(extra)}")
    for f in fields(cls):
        v = kwargs[f.name]
        try:
            if f.name in ("phases",):
                if isinstance(v, str):
                    v = tuple(v)
                kwargs[f.name] = tuple(str(p) for p in v)
            elif f.type in ("float",):
                if isinstance(v, bool):
                    raise TypeError
                kwargs[f.name] = float(v)
            elif f.type in ("int",):
                if isinstance(v, bool) or int(v) != v:
                    raise TypeError
                kwargs[f.name] = int(v)
            elif f.type in ("bool",):
                if not isinstance(v, bool):
                    raise TypeError
            else:
                kwargs[f.name] = str(v)
        except (TypeError, ValueError):
            raise FeederFormatError(f"{where}.{f.name}: invalid value {v!r} (expected {f.type})") from None
    return cls(**kwargs)


def feeder_from_dict(data: Mapping, default_id: str = "feeder") -> Feeder:
    if not isinstance(data, Mapping):
        raise FeederFormatError("top level: expected an object")
    missing = [k for k in _SCHEMA if k not in data]
    if missing:
        raise FeederFormatError(f"top level: missing required key(s) {missing}")
    parts = {}
    for key, (cls, defaults) in _SCHEMA.items():
        records = data[key]
        if not isinstance(records, list):
            raise FeederFormatError(f"{key}: expected a list")
        parts[key] = tuple(_build(cls, r, f"{key}[{i}]", defaults) for i, r in enumerate(records))
    return Feeder(id=str(data.get("id", default_id)), **parts)


def feeder_to_dict(feeder: Feeder) -> dict:
    def rec(obj):
        d = asdict(obj)
        if "phases" in d:
            d["phases"] = list(d["phases"])
        return d

    return {
        "id": feeder.id,
        "buses": [rec(b) for b in feeder.buses],
        "lines": [rec(x) for x in feeder.lines],
        "transformers": [rec(x) for x in feeder.transformers],
        "loads": [rec(x) for x in feeder.loads],
    }


def dumps_feeder(feeder: Feeder) -> str:
    """Canonical text form: one record per line, deterministic byte-for-byte."""
    d = feeder_to_dict(feeder)
    parts = [f' "id": {json.dumps(d["id"])}']
    for key in _SCHEMA:
        rows = ",\n".join(f"  {json.dumps(r)}" for r in d[key])
        parts.append(f' "{key}": [\n{rows}\n ]' if rows else f' "{key}": []')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def save_feeder(feeder: Feeder, path) -> None:
    Path(path).write_text(dumps_feeder(feeder))


def load_feeder(path, validate_feeder: bool = True) -> Feeder:
    """Parse a feeder file. Raises FeederFormatError or FeederValidationError."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        feeder = feeder_from_dict(data, default_id=path.stem)
    except FeederFormatError as exc:
        raise FeederFormatError(f"{path}: {exc}") from None
    if validate_feeder:
        problems = validate(feeder)
        if problems:
            raise FeederValidationError(feeder.id, problems)
    return feeder


# ---------------------------------------------------------------------------
# synthetic generator

# (R ohm/mi, X ohm/mi, ampacity ladder A)
_TRUNK_CONDUCTOR = (0.306, 0.627)
_LATERAL_CONDUCTOR = (0.592, 0.701)
LINE_AMPACITY_LADDER_A = (100.0, 150.0, 200.0, 300.0, 400.0, 600.0, 800.0)


@dataclass(frozen=True)
class FeederSpec:
    """Parameters for :func:`generate_synthetic_feeder`."""

    n_buses: int
    class_mix: Mapping[str, float] = field(default_factory=lambda: {"residential": 1.0})
    three_phase_fraction: float = 0.2   # share of transformers on 3-phase buses built as 3-phase banks
    seed: int = 0
    feeder_id: str | None = None
    primary_kv: float = 7.2             # line-to-neutral (12.47 kV class)
    secondary_kv: float = 0.24
    utilization: tuple[float, float] = (0.55, 0.9)  # base peak kVA / rating
    segment_length_mi: tuple[float, float] = (0.1, 0.5)
    lateral_probability: float = 0.35
    line_margin: tuple[float, float] = (1.2, 1.8)   # ampacity / downstream base amps, before rounding up

    def check(self) -> None:
        if self.n_buses < 2:
            raise ValueError("n_buses must be >= 2")
        if any(k not in CUSTOMER_CLASSES for k in self.class_mix):
            raise ValueError(f"unknown customer class in {dict(self.class_mix)}")
        if any(v < 0 for v in self.class_mix.values()):
            raise ValueError("class_mix weights must be >= 0")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ValueError("class_mix must sum to 1 within 1e-9")
        if not 0 <= self.three_phase_fraction <= 1:
            raise ValueError("three_phase_fraction must lie in [0, 1]")
        lo, hi = self.utilization
        if not 0 < lo <= hi:
            raise ValueError("utilization range must satisfy 0 < lo <= hi")
        lo, hi = self.segment_length_mi
        if not 0 < lo <= hi:
            raise ValueError("segment_length_mi range must satisfy 0 < lo <= hi")
        lo, hi = self.line_margin
        if not 0 < lo <= hi:
            raise ValueError("line_margin range must satisfy 0 < lo <= hi")
        if not self.secondary_kv < self.primary_kv:
            raise ValueError("secondary_kv must be below primary_kv")


_POWER_FACTOR = {"residential": 0.95, "commercial": 0.9, "industrial": 0.85, "mixed": 0.92}
# single-phase size weights favour the small pole-top units
_SMALL_WEIGHTS = np.array([1, 2, 4, 3, 3, 1.5, 1, 0.5])
_LARGE_WEIGHTS = np.array([1, 3, 3, 2, 1.5, 1, 0.5, 0.2, 0.1])


def _r(x: float, nd: int = 4) -> float:
    return float(round(float(x), nd))


def generate_synthetic_feeder(spec: FeederSpec) -> Feeder:
    """Build a random but reproducible radial feeder.

    Half of the buses (rounded down) are transformer secondaries carrying one load
    point each; the rest form a primary tree of three-phase trunk and single-phase
    laterals. Line ampacities are sized from downstream base peak so that a freshly
    generated feeder carries its base load without thermal violations.
    """
    spec.check()
    rng = np.random.default_rng(spec.seed)
    fid = spec.feeder_id or f"synthetic_{spec.seed}"
    n_sec = spec.n_buses // 2
    n_pri = spec.n_buses - 1 - n_sec

    buses = [Bus("b0", PHASES, spec.primary_kv, True)]
    lines: list[LineSegment] = []
    trunk = ["b0"]
    bus_phases = {"b0": PHASES}
    for i in range(1, n_pri + 1):
        if len(trunk) > 0 and rng.random() < 0.6:
            parent = trunk[-1]
        else:
            parent = buses[int(rng.integers(0, len(buses)))].id
        pph = bus_phases[parent]
        if len(pph) == 3 and rng.random() >= spec.lateral_probability:
            ph = PHASES
        else:
            ph = (pph[int(rng.integers(0, len(pph)))],)
        bid = f"b{i}"
        buses.append(Bus(bid, ph, spec.primary_kv))
        bus_phases[bid] = ph
        if len(ph) == 3:
            trunk.append(bid)
        r, x = _TRUNK_CONDUCTOR if len(ph) == 3 else _LATERAL_CONDUCTOR
        length = rng.uniform(*spec.segment_length_mi)
        lines.append(LineSegment(f"l{i}", parent, bid, ph, r, x, _r(length), 0.0))

    classes = [c for c in CUSTOMER_CLASSES if spec.class_mix.get(c, 0) > 0]
    weights = np.array([spec.class_mix[c] for c in classes])
    hosts = [b.id for b in buses[1:]] or ["b0"]
    transformers: list[Transformer] = []
    loads: list[LoadPoint] = []
    for j in range(n_sec):
        # every primary bus hosts one transformer before any hosts a second
        host = hosts[j] if j < len(hosts) else hosts[int(rng.integers(0, len(hosts)))]
        hph = bus_phases[host]
        cls = classes[int(rng.choice(len(classes), p=weights / weights.sum()))]
        three = len(hph) == 3 and (rng.random() < spec.three_phase_fraction or cls == "industrial")
        if three:
            ph, ladder, w = PHASES, THREE_PHASE_LADDER_KVA, _LARGE_WEIGHTS
        else:
            ph, ladder, w = (hph[int(rng.integers(0, len(hph)))],), SINGLE_PHASE_LADDER_KVA, _SMALL_WEIGHTS
        rating = ladder[int(rng.choice(len(ladder), p=w / w.sum()))]
        util = rng.uniform(*spec.utilization)
        pf = _POWER_FACTOR[cls]
        sid = f"s{j + 1}"
        buses.append(Bus(sid, ph, spec.secondary_kv))
        bus_phases[sid] = ph
        zpct = 2.0 if rating <= 50 else (2.5 if rating <= 500 else 5.0)
        transformers.append(Transformer(f"t{j + 1}", host, sid, len(ph), rating, zpct, spec.secondary_kv))
        loads.append(LoadPoint(f"ld{j + 1}", sid, cls, _r(rating * util * pf, 2), pf, f"{cls}"))

    feeder = Feeder(fid, tuple(buses), tuple(lines), tuple(transformers), tuple(loads))

    # size ampacity from downstream base peak kVA
    tree = feeder.tree
    down_kva = {b.id: 0.0 for b in buses}
    for ld in loads:
        down_kva[ld.bus] += ld.peak_kw / ld.power_factor
    for bid in reversed(tree.order[1:]):
        down_kva[tree.parent[bid]] += down_kva[bid]
    sized = []
    for ln in lines:
        amps = down_kva[ln.to_bus] / (len(ln.phases) * spec.primary_kv)
        if len(ln.phases) == 3:
            # phase imbalance from single-phase laterals
            amps *= 1.5
        margin = rng.uniform(*spec.line_margin)
        need = amps * margin
        amp = next((a for a in LINE_AMPACITY_LADDER_A if a >= need), LINE_AMPACITY_LADDER_A[-1])
        sized.append(replace(ln, ampacity_a=amp))
    return replace(feeder, lines=tuple(sized))

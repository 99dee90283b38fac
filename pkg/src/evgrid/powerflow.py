"""Forward-backward sweep load flow for radial feeders and the hourly driver.

Each phase is solved as its own single-phase radial network (no mutual coupling).
Quantities are per-unit on a per-phase power base and a per-bus voltage base equal
to the bus nominal line-to-neutral voltage, so transformers appear as plain series
impedances with a 1:1 ratio.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Mapping

import numpy as np

from .grid import Feeder, LineSegment, Transformer

S_BASE_KVA = 1000.0          # per phase
TRANSFORMER_X_OVER_R = 2.0
HOURS = 24
DAY_TYPES = ("winter", "summer", "shoulder")
DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITER = 50

_PHASE_ANGLE = {"A": 0.0, "B": -2 * math.pi / 3, "C": 2 * math.pi / 3}


class ConfigurationError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, worst_bus=None, hour=None):
        super().__init__(message)
        self.worst_bus = worst_bus
        self.hour = hour


class Network:
    """A feeder compiled into index arrays for the sweep."""

    def __init__(self, feeder: Feeder, s_base_kva: float = S_BASE_KVA):
        self.feeder = feeder
        self.s_base = s_base_kva
        tree = feeder.tree
        buses = feeder.bus_map
        if len(tree.order) != len(feeder.buses):
            raise ConfigurationError(f"feeder {feeder.id} is not connected")

        self.bus_ids = list(tree.order)
        self.bus_index = {b: i for i, b in enumerate(self.bus_ids)}
        node_bus, node_phase, starts = [], [], []
        self.node_index: dict[tuple[str, str], int] = {}
        for b in self.bus_ids:
            starts.append(len(node_bus))
            for ph in buses[b].phases:
                self.node_index[(b, ph)] = len(node_bus)
                node_bus.append(b)
                node_phase.append(ph)
        self.bus_starts = np.array(starts)
        n = len(node_bus)
        self.n_nodes = n
        self.node_bus = node_bus
        self.node_phase = node_phase
        self.v0 = np.array([np.exp(1j * _PHASE_ANGLE[p]) for p in node_phase])
        self.vbase_kv = np.array([buses[b].nominal_voltage_kv for b in node_bus])
        self.ibase_a = s_base_kva / self.vbase_kv

        parent = np.full(n, -1)
        z = np.zeros(n, dtype=complex)
        self.components: list[str] = []
        comp_tx, comp_rating, comp_start = [], [], []
        for b in self.bus_ids[1:]:
            br = tree.parent_branch[b]
            pb = tree.parent[b]
            if isinstance(br, Transformer):
                mag = br.impedance_pct / 100.0 * s_base_kva / (br.rating_kva / br.phase_count)
                ang = math.atan(TRANSFORMER_X_OVER_R)
                zb = complex(mag * math.cos(ang), mag * math.sin(ang))
                comp_tx.append(True)
                comp_rating.append(br.rating_kva)
            else:
                zbase = buses[b].nominal_voltage_kv ** 2 * 1000.0 / s_base_kva
                zb = br.impedance_ohm / zbase
                comp_tx.append(False)
                comp_rating.append(br.ampacity_a)
            if abs(zb) == 0.0:
                raise ConfigurationError(f"branch {br.id} has zero impedance")
            comp_start.append(self.node_index[(b, buses[b].phases[0])])
            self.components.append(br.id)
            for ph in buses[b].phases:
                i = self.node_index[(b, ph)]
                if (pb, ph) not in self.node_index:
                    raise ConfigurationError(f"phase {ph} at bus {b} is not fed through {br.id}")
                parent[i] = self.node_index[(pb, ph)]
                z[i] = zb
        self.parent = parent
        self.z = z
        self.comp_is_tx = np.array(comp_tx, dtype=bool)
        self.comp_rating = np.array(comp_rating, dtype=float)
        self.comp_start = np.array(comp_start, dtype=int)
        self.comp_index = {c: i for i, c in enumerate(self.components)}
        self.n_source_nodes = int(self.bus_starts[1]) if len(self.bus_ids) > 1 else n

        # T[b, n] = 1 when node n lies in the subtree hanging below branch-node b
        T = np.zeros((n, n))
        for i in range(n):
            a = i
            while parent[a] >= 0:
                T[a, i] = 1.0
                a = parent[a]
        self.T = T
        self.T_t = np.ascontiguousarray(T.T)
        self.source_child = np.array([parent[i] >= 0 and parent[parent[i]] < 0 for i in range(n)])

        self.load_ids = [ld.id for ld in feeder.loads]
        self.loads = list(feeder.loads)
        self.load_matrix = np.zeros((len(self.load_ids), n))
        for k, ld in enumerate(feeder.loads):
            phs = buses[ld.bus].phases
            for ph in phs:
                self.load_matrix[k, self.node_index[(ld.bus, ph)]] = 1.0 / len(phs)
        self.load_kvar_per_kw = np.array([ld.kvar_per_kw for ld in feeder.loads])
        self.bus_matrix = np.zeros((len(self.bus_ids), n))
        for j, b in enumerate(self.bus_ids):
            phs = buses[b].phases
            for ph in phs:
                self.bus_matrix[j, self.node_index[(b, ph)]] = 1.0 / len(phs)

    # -- input assembly -------------------------------------------------

    def bus_vector(self, values: Mapping[str, float] | None) -> np.ndarray:
        v = np.zeros(len(self.bus_ids))
        for b, x in (values or {}).items():
            if b not in self.bus_index:
                raise KeyError(f"unknown bus {b!r}")
            v[self.bus_index[b]] += x
        return v

    def bus_profile(self, values: Mapping[str, np.ndarray] | None, hours: int = HOURS) -> np.ndarray:
        out = np.zeros((hours, len(self.bus_ids)))
        for b, x in (values or {}).items():
            if b not in self.bus_index:
                raise KeyError(f"unknown bus {b!r}")
            out[:, self.bus_index[b]] += np.asarray(x, dtype=float)
        return out

    def node_power(self, load_kw: np.ndarray, load_kvar: np.ndarray | None = None,
                   bus_kw: np.ndarray | None = None) -> np.ndarray:
        """Per-node complex demand (pu) from per-load P/Q and extra per-bus unity-pf kW."""
        load_kw = np.atleast_2d(load_kw)
        if load_kvar is None:
            load_kvar = load_kw * self.load_kvar_per_kw
        s = (load_kw + 1j * np.atleast_2d(load_kvar)) @ self.load_matrix
        if bus_kw is not None:
            s = s + np.atleast_2d(bus_kw) @ self.bus_matrix
        return s / self.s_base

    def shunt_admittance(self, shunt_kvar: Mapping[str, float] | None) -> np.ndarray:
        """Capacitor banks as constant susceptance (kvar rated at 1.0 pu)."""
        return 1j * (self.bus_vector(shunt_kvar) @ self.bus_matrix) / self.s_base


@dataclass
class FlowArrays:
    """Raw sweep output for a batch of H hours."""

    network: Network
    voltage: np.ndarray          # (H, N) complex pu
    branch_current: np.ndarray   # (H, N) complex pu, indexed by child node
    injection: np.ndarray        # (H, N) complex pu load current drawn at each node
    iterations: int

    @cached_property
    def voltage_magnitude(self) -> np.ndarray:
        return np.abs(self.voltage)

    @cached_property
    def losses_kw(self) -> np.ndarray:
        net = self.network
        return (np.abs(self.branch_current) ** 2 * net.z.real).sum(axis=1) * net.s_base

    @cached_property
    def losses_kvar(self) -> np.ndarray:
        net = self.network
        return (np.abs(self.branch_current) ** 2 * net.z.imag).sum(axis=1) * net.s_base

    @cached_property
    def source_power(self) -> np.ndarray:
        """Complex power injected at the source, kVA, per hour."""
        net = self.network
        ns = net.n_source_nodes
        src = (net.v0[:ns] * np.conj(self.injection[:, :ns])).sum(axis=1)
        kids = net.source_child
        src = src + (self.voltage[:, net.parent[kids]] * np.conj(self.branch_current[:, kids])).sum(axis=1)
        return src * net.s_base

    @property
    def source_kw(self) -> np.ndarray:
        return self.source_power.real

    @cached_property
    def load_power(self) -> np.ndarray:
        """Complex power consumed by loads and shunts at the solved voltages, kVA."""
        return (self.voltage * np.conj(self.injection)).sum(axis=1) * self.network.s_base

    @cached_property
    def branch_kva(self) -> np.ndarray:
        """(H, n_components) apparent power entering each branch from its source side."""
        net = self.network
        v_from = self.voltage[:, net.parent[net.n_source_nodes:]]
        per_node = np.abs(v_from * np.conj(self.branch_current[:, net.n_source_nodes:])) * net.s_base
        return np.add.reduceat(per_node, net.comp_start - net.n_source_nodes, axis=1)

    @cached_property
    def branch_amps(self) -> np.ndarray:
        """(H, n_components) worst-phase current magnitude in amperes."""
        net = self.network
        ns = net.n_source_nodes
        amps = np.abs(self.branch_current[:, ns:]) * net.ibase_a[ns:]
        return np.maximum.reduceat(amps, net.comp_start - ns, axis=1)

    @cached_property
    def loading(self) -> np.ndarray:
        """(H, n_components) loading fraction: kVA/rating for transformers, A/ampacity for lines."""
        net = self.network
        return np.where(net.comp_is_tx, self.branch_kva, self.branch_amps) / net.comp_rating

    @cached_property
    def bus_min_voltage(self) -> np.ndarray:
        """(H, n_buses) lowest phase voltage magnitude at each bus, pu."""
        return np.minimum.reduceat(self.voltage_magnitude, self.network.bus_starts, axis=1)


def sweep(net: Network, s_pu: np.ndarray, y_shunt: np.ndarray | None = None,
          tol: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITER) -> FlowArrays:
    """Batched forward-backward sweep from a flat start.

    ``s_pu`` is (H, N) complex constant-power demand per node. Converged when the
    largest voltage update of any node in any hour falls below ``tol``.
    """
    s_pu = np.atleast_2d(s_pu)
    H = s_pu.shape[0]
    y = np.zeros(net.n_nodes, dtype=complex) if y_shunt is None else y_shunt
    V = np.broadcast_to(net.v0, (H, net.n_nodes)).copy()
    zT = net.z[:, None] * net.T
    for it in range(1, max_iter + 1):
        inj = np.conj(s_pu / V) + y * V
        ibr = inj @ net.T_t
        V_new = net.v0 - ibr @ zT
        dv = np.abs(V_new - V)
        V = V_new
        worst = float(dv.max()) if dv.size else 0.0
        if not np.isfinite(worst) or np.abs(V).min(initial=1.0) < 1e-3:
            break
        if worst < tol:
            return FlowArrays(net, V, ibr, inj, it)
    h, node = np.unravel_index(int(np.nanargmax(np.where(np.isfinite(dv), dv, np.inf))), dv.shape)
    bus = net.node_bus[node]
    raise ConvergenceError(
        f"load flow did not converge in {max_iter} iterations (worst bus {bus}, hour index {h}, "
        f"last |dV| {dv[h, node]:.3g} pu)", worst_bus=bus, hour=int(h))


# ---------------------------------------------------------------------------
# single snapshot


@dataclass
class SnapshotResult:
    """Solved state for one hour."""

    network: Network
    voltage: np.ndarray
    branch_current: np.ndarray
    branch_kva: np.ndarray
    source_kva: complex
    load_kva: complex
    losses_kw: float
    iterations: int

    @property
    def voltage_magnitude(self) -> np.ndarray:
        return np.abs(self.voltage)

    @property
    def voltage_angle(self) -> np.ndarray:
        return np.angle(self.voltage)

    def bus_voltage(self, bus_id: str) -> dict[str, complex]:
        net = self.network
        return {ph: complex(self.voltage[net.node_index[(bus_id, ph)]])
                for ph in net.feeder.bus_map[bus_id].phases}

    def branch_amps(self, component_id: str) -> dict[str, float]:
        net = self.network
        br = _branch(net.feeder, component_id)
        child = br.to_bus if net.feeder.tree.parent_branch.get(br.to_bus) is br else br.from_bus
        out = {}
        for ph in net.feeder.bus_map[child].phases:
            i = net.node_index[(child, ph)]
            out[ph] = float(abs(self.branch_current[i]) * net.ibase_a[i])
        return out

    @property
    def source_kw(self) -> float:
        return self.source_kva.real

    @property
    def load_kw(self) -> float:
        return self.load_kva.real


def _branch(feeder: Feeder, cid: str) -> LineSegment | Transformer:
    br = feeder.line_map.get(cid) or feeder.transformer_map.get(cid)
    if br is None:
        raise KeyError(f"unknown branch {cid!r}")
    return br


def _snapshot(flow: FlowArrays, h: int) -> SnapshotResult:
    return SnapshotResult(flow.network, flow.voltage[h], flow.branch_current[h], flow.branch_kva[h],
                          complex(flow.source_power[h]), complex(flow.load_power[h]),
                          float(flow.losses_kw[h]), flow.iterations)


def as_network(feeder: Feeder | Network) -> Network:
    return feeder if isinstance(feeder, Network) else Network(feeder)


def solve_snapshot(feeder: Feeder | Network, load_kw: Mapping[str, float],
                   load_kvar: Mapping[str, float] | None = None, *,
                   bus_kw: Mapping[str, float] | None = None,
                   shunt_kvar: Mapping[str, float] | None = None,
                   tol: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITER) -> SnapshotResult:
    """Solve one operating point.

    ``load_kw`` (and optional ``load_kvar``) are keyed by load-point id; loads not
    named draw nothing. Missing kvar entries follow the load's power factor.
    """
    net = as_network(feeder)
    unknown = set(load_kw) - set(net.load_ids) | set(load_kvar or {}) - set(net.load_ids)
    if unknown:
        raise KeyError(f"unknown load point(s): {sorted(unknown)}")
    p = np.array([float(load_kw.get(i, 0.0)) for i in net.load_ids])
    q = p * net.load_kvar_per_kw
    for k, i in enumerate(net.load_ids):
        if load_kvar and i in load_kvar:
            q[k] = float(load_kvar[i])
    s = net.node_power(p, q, net.bus_vector(bus_kw)[None, :] if bus_kw else None)
    flow = sweep(net, s, net.shunt_admittance(shunt_kvar), tol, max_iter)
    return _snapshot(flow, 0)


# ---------------------------------------------------------------------------
# profiles and time series


@dataclass(frozen=True)
class TimeSeriesProfile:
    profile_id: str
    day_type: str
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != HOURS:
            raise ValueError(f"profile {self.profile_id}/{self.day_type}: expected 24 values, got {len(vals)}")
        if any(not v >= 0 for v in vals):
            raise ValueError(f"profile {self.profile_id}/{self.day_type}: values must be >= 0")
        object.__setattr__(self, "values", vals)


class ProfileStore(dict):
    """``(profile_id, day_type) -> TimeSeriesProfile`` with CSV I/O.

    Values are multipliers on each load point's ``peak_kw``.
    """

    def add(self, profile: TimeSeriesProfile) -> None:
        self[(profile.profile_id, profile.day_type)] = profile

    def multipliers(self, profile_id: str, day_type: str) -> np.ndarray:
        try:
            return np.array(self[(profile_id, day_type)].values)
        except KeyError:
            raise KeyError(f"missing profile {profile_id!r} for day type {day_type!r}") from None

    def base_load_kw(self, net: Network, day_type: str) -> np.ndarray:
        """(24, n_loads) base demand for every load point of ``net``."""
        cols = [self.multipliers(ld.profile_id, day_type) * ld.peak_kw for ld in net.loads]
        return np.stack(cols, axis=1) if cols else np.zeros((HOURS, 0))

    @classmethod
    def read_csv(cls, path) -> "ProfileStore":
        with open(path, newline="") as fh:
            return cls._parse(csv.DictReader(fh), str(path))

    @classmethod
    def default(cls) -> "ProfileStore":
        """Bundled illustrative profiles for the four customer classes."""
        text = resources.files("evgrid.data").joinpath("profiles.csv").read_text()
        return cls._parse(csv.DictReader(text.splitlines()), "default profiles")

    @classmethod
    def _parse(cls, reader: csv.DictReader, where: str) -> "ProfileStore":
        store = cls()
        cols = [f"h{h}" for h in range(HOURS)]
        missing = [c for c in ["profile_id", "day_type", *cols] if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{where}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                store.add(TimeSeriesProfile(row["profile_id"], row["day_type"],
                                            tuple(float(row[c]) for c in cols)))
            except ValueError as exc:
                raise ValueError(f"{where}:{lineno}: {exc}") from None
        return store

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["profile_id", "day_type", *[f"h{h}" for h in range(HOURS)]])
            for key in sorted(self):
                p = self[key]
                w.writerow([p.profile_id, p.day_type, *[repr(v) for v in p.values]])


@dataclass
class TimeSeriesResult:
    """24 hourly solutions plus the per-component and per-bus extrema."""

    day_type: str
    flow: FlowArrays
    base_kw: np.ndarray     # (24,) total base demand
    ev_kw: np.ndarray       # (24,) total EV demand

    @property
    def network(self) -> Network:
        return self.flow.network

    @cached_property
    def snapshots(self) -> list[SnapshotResult]:
        return [_snapshot(self.flow, h) for h in range(self.flow.voltage.shape[0])]

    @cached_property
    def max_loading(self) -> dict[str, float]:
        return dict(zip(self.network.components, self.flow.loading.max(axis=0).tolist()))

    @cached_property
    def min_voltage(self) -> dict[str, float]:
        return dict(zip(self.network.bus_ids, self.flow.bus_min_voltage.min(axis=0).tolist()))

    @property
    def source_kw(self) -> np.ndarray:
        return self.flow.source_kw


def solve_timeseries(feeder: Feeder | Network, profiles: ProfileStore, day_type: str,
                     ev_kw_by_bus: Mapping[str, np.ndarray] | None = None, *,
                     shunt_kvar: Mapping[str, float] | None = None,
                     base_kw: np.ndarray | None = None,
                     tol: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITER) -> TimeSeriesResult:
    """Solve the 24 hours of one representative day.

    Hour ``h`` draws ``peak_kw * profile[h]`` at every load point (at the load's power
    factor) plus the unity-power-factor EV demand aggregated per bus. ``base_kw`` may
    be passed precomputed as a (24, n_loads) array.
    """
    net = as_network(feeder)
    if base_kw is None:
        base_kw = profiles.base_load_kw(net, day_type)
    ev = net.bus_profile(ev_kw_by_bus)
    s = net.node_power(base_kw, None, ev)
    try:
        flow = sweep(net, s, net.shunt_admittance(shunt_kvar), tol, max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(f"{day_type} hour {exc.hour}: {exc}", exc.worst_bus, exc.hour) from None
    return TimeSeriesResult(day_type, flow, base_kw.sum(axis=1), ev.sum(axis=1))


def write_loading_csv(result: TimeSeriesResult, path) -> None:
    """Per-hour per-component loading: ``hour, component_id, kind, loading, kva, amps``."""
    net = result.network
    f = result.flow
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "component_id", "kind", "loading", "kva", "amps"])
        for h in range(f.loading.shape[0]):
            for c, cid in enumerate(net.components):
                w.writerow([h, cid, "transformer" if net.comp_is_tx[c] else "line",
                            repr(float(f.loading[h, c])), repr(float(f.branch_kva[h, c])),
                            repr(float(f.branch_amps[h, c]))])


def write_voltage_csv(result: TimeSeriesResult, path) -> None:
    """Per-hour per-bus phase voltages: ``hour, bus_id, phase, voltage_pu, angle_rad``."""
    net = result.network
    f = result.flow
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "bus_id", "phase", "voltage_pu", "angle_rad"])
        for h in range(f.voltage.shape[0]):
            for i in range(net.n_nodes):
                w.writerow([h, net.node_bus[i], net.node_phase[i],
                            repr(float(abs(f.voltage[h, i]))), repr(float(np.angle(f.voltage[h, i])))])

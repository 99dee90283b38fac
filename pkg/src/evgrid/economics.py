"""Upgrade costing and net present value."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

DEFAULT_DISCOUNT_RATE = 0.03

# table kinds; lines are priced per mile by ampacity
KINDS = ("transformer_1ph", "transformer_2ph", "transformer_3ph", "line", "capacitor")


class MissingCostError(KeyError):
    def __str__(self):
        return str(self.args[0])


@dataclass(frozen=True)
class CostEntry:
    kind: str
    size: float
    unit_cost_usd: float
    per_mile: bool = False


class CostTable:
    """Unit costs keyed by ``(kind, size)``."""

    def __init__(self, entries: Iterable[CostEntry]):
        self.entries: dict[tuple[str, float], CostEntry] = {}
        for e in entries:
            if not e.unit_cost_usd > 0:
                raise ValueError(f"cost for {e.kind} {e.size:g} must be > 0")
            self.entries[(e.kind, float(e.size))] = e

    def lookup(self, kind: str, size: float) -> CostEntry:
        try:
            return self.entries[(kind, float(size))]
        except KeyError:
            raise MissingCostError(f"no cost entry for kind {kind!r} size {size:g}") from None

    def sizes(self, kind: str) -> list[float]:
        return sorted(s for k, s in self.entries if k == kind)

    @classmethod
    def read_csv(cls, path) -> "CostTable":
        with open(path, newline="") as fh:
            return cls._parse(csv.DictReader(fh), str(path))

    @classmethod
    def default(cls) -> "CostTable":
        """The bundled placeholder table (illustrative magnitudes, not authoritative)."""
        text = resources.files("evgrid.data").joinpath("cost_table.csv").read_text()
        return cls._parse(csv.DictReader(text.splitlines()), "default cost table")

    @classmethod
    def _parse(cls, reader: csv.DictReader, where: str) -> "CostTable":
        need = ("kind", "size", "unit_cost_usd")
        missing = [c for c in need if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{where}: missing column(s) {missing}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            try:
                per_mile = str(row.get("per_mile") or "").strip().lower() in ("1", "true", "yes")
                entries.append(CostEntry(row["kind"].strip(), float(row["size"]),
                                         float(row["unit_cost_usd"]), per_mile))
            except ValueError as exc:
                raise ValueError(f"{where}:{lineno}: {exc}") from None
        return cls(entries)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "size", "unit_cost_usd", "per_mile"])
            for (kind, size), e in sorted(self.entries.items()):
                w.writerow([kind, repr(size), repr(e.unit_cost_usd), str(e.per_mile).lower()])


def action_cost(action, table: CostTable) -> float:
    """Installed cost of one upgrade action (see ``planner.UpgradeAction``)."""
    entry = table.lookup(action.cost_kind, action.unit_size)
    cost = entry.unit_cost_usd * action.units
    if entry.per_mile:
        cost *= action.length_mi
    return cost


@dataclass
class CostStream:
    """Total upgrade spend per year, plus per-category subtotals."""

    costs: dict[int, float]
    by_category: dict[str, dict[int, float]]

    @property
    def total(self) -> float:
        return float(sum(self.costs.values()))

    def category_total(self, category: str) -> float:
        return float(sum(self.by_category.get(category, {}).values()))


def cost_plan(plan: Iterable, table: CostTable, years: Iterable[int] | None = None) -> CostStream:
    """Sum action costs by year. ``years`` pre-fills zero entries for the horizon."""
    costs: dict[int, float] = {y: 0.0 for y in (years or ())}
    cats: dict[str, dict[int, float]] = defaultdict(dict)
    for a in plan:
        c = action_cost(a, table)
        costs[a.year] = costs.get(a.year, 0.0) + c
        cats[a.category][a.year] = cats[a.category].get(a.year, 0.0) + c
    return CostStream(dict(sorted(costs.items())), {k: dict(sorted(v.items())) for k, v in sorted(cats.items())})


def npv(stream: Mapping[int, float] | CostStream, discount_rate: float = DEFAULT_DISCOUNT_RATE,
        base_year: int | None = None) -> float:
    """Present value at ``base_year`` of a year-indexed cost stream."""
    costs = stream.costs if isinstance(stream, CostStream) else stream
    if discount_rate <= -1:
        raise ValueError("discount rate must be > -1")
    if not costs:
        return 0.0
    if base_year is None:
        base_year = min(costs)
    if base_year > min(costs):
        raise ValueError(f"base year {base_year} is after the first cost year {min(costs)}")
    q = 1.0 + discount_rate
    return float(sum(c / q ** (y - base_year) for y, c in costs.items()))

"""Canonical in-memory power grid model.

All electrical quantities live in the units people read them in (MW, MVAr,
per-unit voltages); solvers normalize to per-unit on ``base_mva`` internally.
Every type here is an immutable value: mutation helpers return new objects.
"""
from __future__ import annotations

from dataclasses import dataclass, replace, field
from enum import Enum

import numpy as np


class GridError(Exception):
    """Structural problem in a grid description (dangling refs, bad values)."""


class BusKind(str, Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    bus_kind: BusKind
    vm_min: float = 0.9
    vm_max: float = 1.1


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p_mw: float
    q_mvar: float


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_mw: float
    vm_setpoint_pu: float
    p_min_mw: float
    p_max_mw: float
    q_min_mvar: float
    q_max_mvar: float
    cost_c2: float = 0.0  # $/MW^2 h
    cost_c1: float = 0.0  # $/MWh
    cost_c0: float = 0.0  # $/h
    is_slack: bool = False


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    b_pu: float = 0.0  # total charging susceptance, split half per end
    tap_ratio: float = 1.0
    rate_mva: float = 0.0  # 0 = unlimited


@dataclass(frozen=True)
class GridCase:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    loads: tuple[Load, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    # internal dense id -> external id from the source file (identity if absent);
    # presentation metadata only, excluded from value equality
    external_bus_ids: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.external_bus_ids:
            object.__setattr__(
                self, "external_bus_ids", tuple(b.id for b in self.buses)
            )
        validate_case(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_by_id(self, bus_id: int) -> Bus:
        return self.buses[bus_id]

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.bus_kind == BusKind.SLACK)

    @property
    def slack_gen(self) -> Generator:
        return next(g for g in self.generators if g.is_slack)

    @property
    def nonslack_gens(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if not g.is_slack)

    def with_loads(self, loads: tuple[Load, ...]) -> "GridCase":
        return replace(self, loads=loads)


def validate_case(case: GridCase) -> None:
    """Raise GridError if any structural invariant is broken."""
    n = len(case.buses)
    for i, b in enumerate(case.buses):
        if b.id != i:
            raise GridError(f"bus ids must be dense 0..{n - 1}, got {b.id} at {i}")
        if b.vm_min > b.vm_max:
            raise GridError(f"bus {b.id}: vm_min {b.vm_min} > vm_max {b.vm_max}")
    slack_buses = [b for b in case.buses if b.bus_kind == BusKind.SLACK]
    if len(slack_buses) != 1:
        raise GridError(f"expected exactly one slack bus, found {len(slack_buses)}")
    for ld in case.loads:
        if not 0 <= ld.bus < n:
            raise GridError(f"load {ld.id} references missing bus {ld.bus}")
    slack_gens = [g for g in case.generators if g.is_slack]
    if len(slack_gens) != 1:
        raise GridError(f"expected exactly one slack generator, found {len(slack_gens)}")
    if slack_gens[0].bus != slack_buses[0].id:
        raise GridError(
            f"slack generator sits on bus {slack_gens[0].bus}, "
            f"slack bus is {slack_buses[0].id}"
        )
    for g in case.generators:
        if not 0 <= g.bus < n:
            raise GridError(f"generator {g.id} references missing bus {g.bus}")
        if g.p_min_mw > g.p_max_mw:
            raise GridError(f"generator {g.id}: p_min > p_max")
        if g.q_min_mvar > g.q_max_mvar:
            raise GridError(f"generator {g.id}: q_min > q_max")
    for ln in case.lines:
        if not 0 <= ln.from_bus < n or not 0 <= ln.to_bus < n:
            raise GridError(f"line {ln.id} references a missing bus")
        if ln.from_bus == ln.to_bus:
            raise GridError(f"line {ln.id} is a self-loop at bus {ln.from_bus}")
        if ln.x_pu == 0:
            raise GridError(f"line {ln.id} has zero reactance")
        if ln.tap_ratio <= 0:
            raise GridError(f"line {ln.id} has non-positive tap ratio")
    if n > 1 and not _connected(case):
        raise GridError("grid graph is not connected")


def _connected(case: GridCase) -> bool:
    adj: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for ln in case.lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == case.n_bus


# ---------------------------------------------------------------------------
# Heterogeneous (node-typed) view used by the text embeddings
# ---------------------------------------------------------------------------

NODE_TYPES = ("bus", "load", "gen", "slack", "line")


@dataclass(frozen=True)
class HeteroGrid:
    """Node-typed view of a grid: per-type feature records plus typed edges.

    ``nodes`` maps each type in NODE_TYPES to a tuple of feature dicts;
    ``edges`` holds (src_type, src_id, dst_type, dst_id) connections.
    The slack machine appears under type "slack", other machines under "gen".
    """
    name: str
    base_mva: float
    nodes: dict[str, tuple[dict, ...]]
    edges: tuple[tuple[str, int, str, int], ...]

    def __post_init__(self):
        counts = {t: len(self.nodes.get(t, ())) for t in NODE_TYPES}
        for src_t, src_i, dst_t, dst_i in self.edges:
            if src_i >= counts.get(src_t, 0) or dst_i >= counts.get(dst_t, 0):
                raise GridError(
                    f"edge ({src_t},{src_i})->({dst_t},{dst_i}) has a dangling endpoint"
                )


def to_hetero(case: GridCase) -> HeteroGrid:
    """Split a GridCase into typed node tables with explicit connection edges."""
    bus_nodes = tuple(
        {
            "id": b.id,
            "base_kv": b.base_kv,
            "bus_kind": b.bus_kind.value,
            "vm_min": b.vm_min,
            "vm_max": b.vm_max,
        }
        for b in case.buses
    )
    load_nodes = tuple(
        {"id": ld.id, "bus": ld.bus, "p_mw": ld.p_mw, "q_mvar": ld.q_mvar}
        for ld in case.loads
    )

    def gen_record(g: Generator) -> dict:
        return {
            "id": g.id,
            "bus": g.bus,
            "p_mw": g.p_mw,
            "vm_setpoint_pu": g.vm_setpoint_pu,
            "p_min_mw": g.p_min_mw,
            "p_max_mw": g.p_max_mw,
            "q_min_mvar": g.q_min_mvar,
            "q_max_mvar": g.q_max_mvar,
            "cost_c2": g.cost_c2,
            "cost_c1": g.cost_c1,
            "cost_c0": g.cost_c0,
        }

    gen_nodes = tuple(gen_record(g) for g in case.nonslack_gens)
    slack_nodes = (gen_record(case.slack_gen),)
    line_nodes = tuple(
        {
            "id": ln.id,
            "from_bus": ln.from_bus,
            "to_bus": ln.to_bus,
            "r_pu": ln.r_pu,
            "x_pu": ln.x_pu,
            "b_pu": ln.b_pu,
            "tap_ratio": ln.tap_ratio,
            "rate_mva": ln.rate_mva,
        }
        for ln in case.lines
    )

    edges: list[tuple[str, int, str, int]] = []
    for i, ld in enumerate(case.loads):
        edges.append(("load", i, "bus", ld.bus))
    for i, g in enumerate(case.nonslack_gens):
        edges.append(("gen", i, "bus", g.bus))
    edges.append(("slack", 0, "bus", case.slack_gen.bus))
    for i, ln in enumerate(case.lines):
        edges.append(("line", i, "bus", ln.from_bus))
        edges.append(("line", i, "bus", ln.to_bus))

    return HeteroGrid(
        name=case.name,
        base_mva=case.base_mva,
        nodes={
            "bus": bus_nodes,
            "load": load_nodes,
            "gen": gen_nodes,
            "slack": slack_nodes,
            "line": line_nodes,
        },
        edges=tuple(edges),
    )


def from_hetero(grid: HeteroGrid) -> GridCase:
    """Inverse of to_hetero; field-exact round trip."""
    buses = tuple(
        Bus(
            id=int(r["id"]),
            base_kv=float(r["base_kv"]),
            bus_kind=BusKind(r["bus_kind"]),
            vm_min=float(r["vm_min"]),
            vm_max=float(r["vm_max"]),
        )
        for r in grid.nodes.get("bus", ())
    )
    loads = tuple(
        Load(
            id=int(r["id"]),
            bus=int(r["bus"]),
            p_mw=float(r["p_mw"]),
            q_mvar=float(r["q_mvar"]),
        )
        for r in grid.nodes.get("load", ())
    )

    def gen_from_record(r: dict, is_slack: bool) -> Generator:
        return Generator(
            id=int(r["id"]),
            bus=int(r["bus"]),
            p_mw=float(r["p_mw"]),
            vm_setpoint_pu=float(r["vm_setpoint_pu"]),
            p_min_mw=float(r["p_min_mw"]),
            p_max_mw=float(r["p_max_mw"]),
            q_min_mvar=float(r["q_min_mvar"]),
            q_max_mvar=float(r["q_max_mvar"]),
            cost_c2=float(r["cost_c2"]),
            cost_c1=float(r["cost_c1"]),
            cost_c0=float(r["cost_c0"]),
            is_slack=is_slack,
        )

    gens = [gen_from_record(r, False) for r in grid.nodes.get("gen", ())]
    gens += [gen_from_record(r, True) for r in grid.nodes.get("slack", ())]
    gens.sort(key=lambda g: g.id)
    lines = tuple(
        Line(
            id=int(r["id"]),
            from_bus=int(r["from_bus"]),
            to_bus=int(r["to_bus"]),
            r_pu=float(r["r_pu"]),
            x_pu=float(r["x_pu"]),
            b_pu=float(r["b_pu"]),
            tap_ratio=float(r["tap_ratio"]),
            rate_mva=float(r["rate_mva"]),
        )
        for r in grid.nodes.get("line", ())
    )
    return GridCase(
        name=grid.name,
        base_mva=grid.base_mva,
        buses=buses,
        loads=loads,
        generators=tuple(gens),
        lines=lines,
    )


def admittance_matrix(case: GridCase) -> np.ndarray:
    """Complex bus admittance matrix (per-unit) from the pi line model.

    Charging susceptance is split half per end; off-nominal taps are applied
    on the from side.
    """
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for ln in case.lines:
        if ln.r_pu == 0 and ln.x_pu == 0:
            raise GridError(f"line {ln.id} has zero series impedance")
        ys = 1.0 / complex(ln.r_pu, ln.x_pu)
        bc = 1j * ln.b_pu / 2.0
        t = ln.tap_ratio
        f, to = ln.from_bus, ln.to_bus
        Y[f, f] += (ys + bc) / (t * t)
        Y[to, to] += ys + bc
        Y[f, to] += -ys / t
        Y[to, f] += -ys / t
    return Y

"""MATPOWER case file (.m, format version 2) reader and writer.

Only numeric literals and matrix blocks are understood; no MATLAB evaluation.
External (1-based, possibly sparse) bus numbers are remapped to dense 0-based
internal ids; the original numbers are kept on GridCase.external_bus_ids and
restored on write.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .grid_model import Bus, BusKind, Generator, GridCase, Line, Load

# MATPOWER column indices
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN = range(13)
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS = range(11)

_BUS_TYPE_TO_KIND = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
_KIND_TO_BUS_TYPE = {v: k for k, v in _BUS_TYPE_TO_KIND.items()}


class MatpowerParseError(Exception):
    """Malformed case file; carries the offending line number when known."""


class UnsupportedFeatureError(MatpowerParseError):
    """Valid MATPOWER construct this reader deliberately does not handle."""


@dataclass
class RawCaseTables:
    """Numeric tables exactly as read from the file."""
    name: str
    base_mva: float
    bus: list[list[float]]
    gen: list[list[float]]
    branch: list[list[float]]
    gencost: list[list[float]]
    warnings: list[str] = field(default_factory=list)


_NUM = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def _strip_comments(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def parse_raw_tables(text: str) -> RawCaseTables:
    """Tokenize the case file into named numeric tables."""
    name = "case"
    m = re.search(r"function\s+\w+\s*=\s*(\w+)", text)
    if m:
        name = m.group(1)

    base_mva = None
    tables: dict[str, list[list[float]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = _strip_comments(lines[i])
        m = re.search(r"mpc\.(\w+)\s*=\s*(.*)", raw)
        if not m:
            i += 1
            continue
        key, rest = m.group(1), m.group(2).strip()
        if key == "baseMVA":
            num = _NUM.search(rest)
            if not num:
                raise MatpowerParseError(f"line {i + 1}: baseMVA is not numeric")
            base_mva = float(num.group(0))
            i += 1
            continue
        if key == "version":
            ver = re.search(r"'(\d+)'", rest)
            if ver and ver.group(1) != "2":
                raise UnsupportedFeatureError(
                    f"line {i + 1}: only case format version 2 is supported"
                )
            i += 1
            continue
        if not rest.startswith("["):
            i += 1  # scalar/string field we do not use
            continue
        # collect the matrix body up to the closing bracket
        body = rest[1:]
        start = i
        while "]" not in body:
            i += 1
            if i >= len(lines):
                raise MatpowerParseError(f"line {start + 1}: unterminated matrix {key}")
            body += "\n" + _strip_comments(lines[i])
        body = body[: body.index("]")]
        rows = []
        for j, row_text in enumerate(re.split(r"[;\n]", body)):
            if not row_text.strip():
                continue
            try:
                rows.append([float(tok) for tok in _NUM.findall(row_text)])
            except ValueError:
                raise MatpowerParseError(
                    f"line {start + j + 1}: malformed row in {key}"
                ) from None
        tables[key] = rows
        i += 1

    if base_mva is None:
        raise MatpowerParseError("missing mpc.baseMVA")
    for req, min_cols in (("bus", 13), ("gen", 21), ("branch", 13), ("gencost", 4)):
        if req not in tables:
            raise MatpowerParseError(f"missing mpc.{req} table")
        for j, row in enumerate(tables[req]):
            if len(row) < min_cols:
                raise MatpowerParseError(
                    f"mpc.{req} row {j + 1}: expected >= {min_cols} columns, "
                    f"got {len(row)}"
                )
    return RawCaseTables(
        name=name,
        base_mva=base_mva,
        bus=tables["bus"],
        gen=tables["gen"],
        branch=tables["branch"],
        gencost=tables["gencost"],
    )


def _gencost_coeffs(row: list[float], gen_idx: int) -> tuple[float, float, float]:
    model = int(row[0])
    if model != 2:
        raise UnsupportedFeatureError(
            f"gencost row {gen_idx + 1}: only polynomial cost model 2 is supported "
            f"(got model {model})"
        )
    n = int(row[3])
    coeffs = row[4 : 4 + n]
    if len(coeffs) != n:
        raise MatpowerParseError(f"gencost row {gen_idx + 1}: expected {n} coefficients")
    if n > 3:
        raise UnsupportedFeatureError(
            f"gencost row {gen_idx + 1}: polynomial degree > 2 not supported"
        )
    padded = [0.0] * (3 - n) + coeffs
    return padded[0], padded[1], padded[2]


def raw_to_case(raw: RawCaseTables) -> GridCase:
    """Build a validated GridCase from raw tables, honoring status columns."""
    ext_ids = [int(r[BUS_I]) for r in raw.bus]
    if len(set(ext_ids)) != len(ext_ids):
        raise MatpowerParseError("duplicate bus numbers in mpc.bus")
    ext_to_int = {e: i for i, e in enumerate(ext_ids)}

    buses = []
    for i, r in enumerate(raw.bus):
        btype = int(r[BUS_TYPE])
        if btype not in _BUS_TYPE_TO_KIND:
            raise UnsupportedFeatureError(
                f"bus {ext_ids[i]}: unsupported bus type {btype}"
            )
        buses.append(
            Bus(
                id=i,
                base_kv=r[BASE_KV],
                bus_kind=_BUS_TYPE_TO_KIND[btype],
                vm_min=r[VMIN],
                vm_max=r[VMAX],
            )
        )

    loads = []
    for i, r in enumerate(raw.bus):
        if r[PD] != 0 or r[QD] != 0:
            loads.append(Load(id=len(loads), bus=i, p_mw=r[PD], q_mvar=r[QD]))

    if len(raw.gencost) != len(raw.gen):
        raise MatpowerParseError(
            f"gencost has {len(raw.gencost)} rows for {len(raw.gen)} generators"
        )
    gens = []
    for i, r in enumerate(raw.gen):
        if int(r[GEN_STATUS]) <= 0:
            raw.warnings.append(f"generator {i} out of service; dropped")
            continue
        bus_i = ext_to_int.get(int(r[GEN_BUS]))
        if bus_i is None:
            raise MatpowerParseError(f"generator {i} references unknown bus {int(r[GEN_BUS])}")
        c2, c1, c0 = _gencost_coeffs(raw.gencost[i], i)
        gens.append(
            Generator(
                id=len(gens),
                bus=bus_i,
                p_mw=r[PG],
                vm_setpoint_pu=r[VG],
                p_min_mw=r[PMIN],
                p_max_mw=r[PMAX],
                q_min_mvar=r[QMIN],
                q_max_mvar=r[QMAX],
                cost_c2=c2,
                cost_c1=c1,
                cost_c0=c0,
                is_slack=buses[bus_i].bus_kind == BusKind.SLACK,
            )
        )

    lines = []
    for i, r in enumerate(raw.branch):
        if int(r[BR_STATUS]) <= 0:
            raw.warnings.append(f"branch {i} out of service; dropped")
            continue
        f = ext_to_int.get(int(r[F_BUS]))
        t = ext_to_int.get(int(r[T_BUS]))
        if f is None or t is None:
            raise MatpowerParseError(f"branch {i} references an unknown bus")
        if r[SHIFT] != 0:
            raise UnsupportedFeatureError(f"branch {i}: phase shifters not supported")
        lines.append(
            Line(
                id=len(lines),
                from_bus=f,
                to_bus=t,
                r_pu=r[BR_R],
                x_pu=r[BR_X],
                b_pu=r[BR_B],
                tap_ratio=r[TAP] if r[TAP] != 0 else 1.0,
                rate_mva=r[RATE_A],
            )
        )

    return GridCase(
        name=raw.name,
        base_mva=raw.base_mva,
        buses=tuple(buses),
        loads=tuple(loads),
        generators=tuple(gens),
        lines=tuple(lines),
        external_bus_ids=tuple(ext_ids),
    )


def parse_matpower(text: str) -> GridCase:
    return raw_to_case(parse_raw_tables(text))


def load_case(path: str | Path) -> GridCase:
    return parse_matpower(Path(path).read_text())


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_matpower(case: GridCase) -> str:
    """Emit a version-2 case file; parse_matpower round-trips it field-exact."""
    ext = case.external_bus_ids
    loads_by_bus: dict[int, Load] = {}
    for ld in case.loads:
        if ld.bus in loads_by_bus:
            prev = loads_by_bus[ld.bus]
            ld = Load(prev.id, ld.bus, prev.p_mw + ld.p_mw, prev.q_mvar + ld.q_mvar)
        loads_by_bus[ld.bus] = ld

    out = [f"function mpc = {case.name}", "mpc.version = '2';", ""]
    out.append(f"mpc.baseMVA = {_fmt(case.base_mva)};")

    out.append("mpc.bus = [")
    for b in case.buses:
        ld = loads_by_bus.get(b.id)
        pd = ld.p_mw if ld else 0.0
        qd = ld.q_mvar if ld else 0.0
        row = [ext[b.id], _KIND_TO_BUS_TYPE[b.bus_kind], pd, qd, 0, 0, 1, 1, 0,
               b.base_kv, 1, b.vm_max, b.vm_min]
        out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    out.append("];")

    out.append("mpc.gen = [")
    for g in case.generators:
        row = [ext[g.bus], g.p_mw, 0, g.q_max_mvar, g.q_min_mvar, g.vm_setpoint_pu,
               case.base_mva, 1, g.p_max_mw, g.p_min_mw] + [0] * 11
        out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    out.append("];")

    out.append("mpc.branch = [")
    for ln in case.lines:
        tap = 0.0 if ln.tap_ratio == 1.0 else ln.tap_ratio
        row = [ext[ln.from_bus], ext[ln.to_bus], ln.r_pu, ln.x_pu, ln.b_pu,
               ln.rate_mva, ln.rate_mva, ln.rate_mva, tap, 0, 1, -360, 360]
        out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    out.append("];")

    out.append("mpc.gencost = [")
    for g in case.generators:
        row = [2, 0, 0, 3, g.cost_c2, g.cost_c1, g.cost_c0]
        out.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    out.append("];")
    return "\n".join(out) + "\n"

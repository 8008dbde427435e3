"""LLM-facing text forms: grid embeddings (graph / table) and solution JSON.

Both embeddings are canonical JSON -- sorted keys, compact separators, values
rounded to a fixed number of decimals -- so equal grids always serialize to
identical bytes. The graph form carries explicit typed edges; the table form
keeps bus references inline as columns and omits the edge list entirely,
which makes it strictly shorter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .grid_model import NODE_TYPES, GridError, HeteroGrid
from .solvers import OpfSolution

SCHEMA = "gridprompt/v1"


class EmbeddingParseError(Exception):
    """Embedding text violates the grid schema; message names the JSON path."""


class InvalidResponse(Exception):
    """No complete, well-typed solution JSON could be extracted from a response."""


@dataclass(frozen=True)
class EmbeddingFormat:
    kind: str = "graph"  # "graph" | "table"
    decimals: int = 4

    def __post_init__(self):
        if self.kind not in ("graph", "table"):
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.decimals < 1:
            raise ValueError("decimals must be >= 1")


@dataclass(frozen=True)
class SolutionDoc:
    """Parsed prediction: per-component (id -> values) maps."""
    gen: tuple[tuple[int, float, float], ...]    # (id, p_mw, q_mvar)
    slack: tuple[tuple[int, float, float], ...]
    bus: tuple[tuple[int, float, float], ...]    # (id, vm_pu, va_deg)


_REF_COLUMNS = {"load": ("bus",), "gen": ("bus",), "slack": ("bus",),
                "line": ("from_bus", "to_bus"), "bus": ()}


def _round_record(rec: dict, decimals: int) -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            out[k] = v
        elif isinstance(v, int):
            out[k] = v
        else:
            out[k] = round(v, decimals)
    return out


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def embed_grid(grid: HeteroGrid, fmt: EmbeddingFormat = EmbeddingFormat()) -> str:
    doc: dict = {
        "schema": SCHEMA,
        "kind": fmt.kind,
        "name": grid.name,
        "base_mva": round(float(grid.base_mva), fmt.decimals),
    }
    nodes = {}
    for t in NODE_TYPES:
        records = []
        for rec in grid.nodes.get(t, ()):
            if fmt.kind == "graph":
                rec = {k: v for k, v in rec.items() if k not in _REF_COLUMNS[t]}
            records.append(_round_record(rec, fmt.decimals))
        nodes[t] = records
    if fmt.kind == "graph":
        doc["nodes"] = nodes
        doc["edges"] = [list(e) for e in grid.edges]
    else:
        doc.update(nodes)
    return _dumps(doc)


def _require(cond: bool, path: str, why: str):
    if not cond:
        raise EmbeddingParseError(f"{path}: {why}")


def parse_grid(text: str) -> HeteroGrid:
    """Inverse of embed_grid for either kind; re-embedding is byte-identical."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EmbeddingParseError(f"$: not valid JSON ({exc})") from None
    _require(isinstance(doc, dict), "$", "expected a JSON object")
    _require(doc.get("schema") == SCHEMA, "$.schema", f"expected {SCHEMA!r}")
    kind = doc.get("kind")
    _require(kind in ("graph", "table"), "$.kind", "expected 'graph' or 'table'")

    raw_nodes = doc.get("nodes", doc) if kind == "graph" else doc
    nodes: dict[str, list[dict]] = {}
    for t in NODE_TYPES:
        recs = raw_nodes.get(t)
        _require(isinstance(recs, list), f"$.{t}", "missing node table")
        nodes[t] = [dict(r) for r in recs]

    n_bus = len(nodes["bus"])
    if kind == "graph":
        edges = doc.get("edges")
        _require(isinstance(edges, list), "$.edges", "missing edge list")
        # restore reference columns from the typed edges
        line_ends: dict[int, list[int]] = {}
        for k, e in enumerate(edges):
            _require(
                isinstance(e, list) and len(e) == 4, f"$.edges[{k}]",
                "expected [src_type, src_id, dst_type, dst_id]",
            )
            src_t, src_i, dst_t, dst_i = e
            _require(dst_t == "bus", f"$.edges[{k}]", "edges must point at buses")
            _require(0 <= dst_i < n_bus, f"$.edges[{k}]", f"missing bus {dst_i}")
            _require(
                src_t in ("load", "gen", "slack", "line") and 0 <= src_i < len(nodes[src_t]),
                f"$.edges[{k}]", "dangling source node",
            )
            if src_t == "line":
                line_ends.setdefault(src_i, []).append(dst_i)
            else:
                nodes[src_t][src_i]["bus"] = dst_i
        for i, rec in enumerate(nodes["line"]):
            ends = line_ends.get(i, [])
            _require(len(ends) == 2, f"$.line[{i}]", "expected exactly two line edges")
            rec["from_bus"], rec["to_bus"] = ends
        for t in ("load", "gen", "slack"):
            for i, rec in enumerate(nodes[t]):
                _require("bus" in rec, f"$.{t}[{i}]", "no bus edge for this node")
    else:
        for t in ("load", "gen", "slack", "line"):
            for i, rec in enumerate(nodes[t]):
                for col in _REF_COLUMNS[t]:
                    _require(col in rec, f"$.{t}[{i}].{col}", "missing bus reference")
                    _require(
                        isinstance(rec[col], int) and 0 <= rec[col] < n_bus,
                        f"$.{t}[{i}].{col}", f"missing bus {rec.get(col)}",
                    )

    edges: list[tuple[str, int, str, int]] = []
    for i, rec in enumerate(nodes["load"]):
        edges.append(("load", i, "bus", rec["bus"]))
    for i, rec in enumerate(nodes["gen"]):
        edges.append(("gen", i, "bus", rec["bus"]))
    for i, rec in enumerate(nodes["slack"]):
        edges.append(("slack", i, "bus", rec["bus"]))
    for i, rec in enumerate(nodes["line"]):
        edges.append(("line", i, "bus", rec["from_bus"]))
        edges.append(("line", i, "bus", rec["to_bus"]))

    try:
        return HeteroGrid(
            name=str(doc.get("name", "grid")),
            base_mva=float(doc.get("base_mva", 100.0)),
            nodes={t: tuple(nodes[t]) for t in NODE_TYPES},
            edges=tuple(edges),
        )
    except GridError as exc:
        raise EmbeddingParseError(f"$: {exc}") from None


def encode_solution(sol: OpfSolution, decimals: int = 4) -> str:
    doc = {
        "schema": SCHEMA,
        "gen": [
            {"id": i, "p_mw": round(p, decimals), "q_mvar": round(q, decimals)}
            for i, p, q in sol.gen
        ],
        "slack": [
            {
                "id": sol.slack[0],
                "p_mw": round(sol.slack[1], decimals),
                "q_mvar": round(sol.slack[2], decimals),
            }
        ],
        "bus": [
            {"id": i, "vm_pu": round(vm, decimals), "va_deg": round(va, decimals)}
            for i, vm, va in sol.bus
        ],
    }
    return _dumps(doc)


def _first_json_object(text: str) -> dict | None:
    """First syntactically complete JSON object embedded anywhere in the text."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_str:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_str = False
                continue
            if ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : pos + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    return None


def _triples(doc: dict, key: str, fields: tuple[str, str]):
    rows = doc.get(key)
    if not isinstance(rows, list):
        raise InvalidResponse(f"missing or invalid values: {key!r}")
    out = []
    for row in rows:
        if not isinstance(row, dict):
            raise InvalidResponse(f"missing or invalid values: {key!r} row")
        try:
            rid = int(row["id"])
            a = float(row[fields[0]])
            b = float(row[fields[1]])
        except (KeyError, TypeError, ValueError):
            raise InvalidResponse(f"missing or invalid values: {key!r} row") from None
        if not (math.isfinite(a) and math.isfinite(b)):
            raise InvalidResponse(f"missing or invalid values: non-finite in {key!r}")
        out.append((rid, a, b))
    return tuple(out)


def parse_solution_doc(text: str) -> SolutionDoc:
    """Leniently extract a solution from an LLM response.

    Finds the first complete JSON object anywhere in the text; raises
    InvalidResponse if there is none or if gen/slack/bus are missing or carry
    non-numeric / non-finite values.
    """
    doc = _first_json_object(text)
    if doc is None:
        raise InvalidResponse("no JSON object found in response")
    return SolutionDoc(
        gen=_triples(doc, "gen", ("p_mw", "q_mvar")),
        slack=_triples(doc, "slack", ("p_mw", "q_mvar")),
        bus=_triples(doc, "bus", ("vm_pu", "va_deg")),
    )


def solution_doc_from_opf(sol: OpfSolution) -> SolutionDoc:
    """Exact (unrounded) doc for ground-truth comparisons."""
    return SolutionDoc(
        gen=tuple((i, p, q) for i, p, q in sol.gen),
        slack=(sol.slack,),
        bus=tuple(sol.bus),
    )

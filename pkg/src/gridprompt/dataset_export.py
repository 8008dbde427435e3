"""Dataset orchestration: mutate -> solve -> embed, plus fine-tuning export.

A solved dataset is a directory:

    manifest.json            run parameters, per-entry metadata, rejections
    scenarios/{i}.m          mutated MATPOWER case
    embeddings/{i}.json      grid embedding text (graph or table form)
    solutions/{i}.json       rounded solution text shown to the LLM
    truth/{i}.json           full-precision solver output
    rejected/{i}.json        infeasible scenarios with diagnostics

Scenario indices that fail the OPF are recorded under rejected/ and further
indices are drawn until n feasible entries exist, so entry count is exact and
a rerun with the same seed reproduces the directory byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .embedding import EmbeddingFormat, embed_grid, encode_solution
from .grid_model import GridCase, to_hetero
from .llm_protocol import (
    EXAMPLE_INPUT_PREFIX,
    EXAMPLE_OUTPUT_PREFIX,
    SYSTEM_PROMPT,
)
from .matpower_io import parse_matpower, write_matpower
from .scenario_gen import MutationSpec, mutate
from .solvers import OpfOptions, OpfSolution, solve_opf

MANIFEST_SCHEMA = "gridprompt/dataset/v1"


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class FinetuneConfig:
    rank: int = 8
    alpha: float = 16.0
    base_model: str = ""
    notes: str = ""

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class SolvedEntry:
    index: int
    case: GridCase
    grid_text: str
    solution_text: str
    solution: OpfSolution


@dataclass
class SolvedDataset:
    root: Path
    entries: list[SolvedEntry]
    rejected: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def truth_map(self) -> dict[str, str]:
        """grid embedding text -> full-precision solution text (oracle backend).

        Deliberately not the rounded context text: the oracle must score a
        true zero against the unrounded solver truth.
        """
        return {e.grid_text: encode_solution(e.solution, decimals=12) for e in self.entries}


def _truth_doc(sol: OpfSolution) -> dict:
    return {
        "gen": [[i, p, q] for i, p, q in sol.gen],
        "slack": list(sol.slack),
        "bus": [[i, vm, va] for i, vm, va in sol.bus],
        "objective_cost": sol.objective_cost,
        "feasible": sol.feasible,
        "max_violation_pu": sol.max_violation_pu,
    }


def _truth_from_doc(doc: dict) -> OpfSolution:
    import numpy as np

    return OpfSolution(
        gen=tuple((int(i), float(p), float(q)) for i, p, q in doc["gen"]),
        slack=(int(doc["slack"][0]), float(doc["slack"][1]), float(doc["slack"][2])),
        bus=tuple((int(i), float(vm), float(va)) for i, vm, va in doc["bus"]),
        objective_cost=float(doc["objective_cost"]),
        feasible=bool(doc["feasible"]),
        max_violation_pu=float(doc["max_violation_pu"]),
        controls=np.array([]),
    )


def build_solved_dataset(
    case: GridCase,
    spec: MutationSpec,
    n: int,
    fmt: EmbeddingFormat,
    out_dir: str | Path,
    opf_options: OpfOptions | None = None,
    max_draws_factor: int = 3,
) -> SolvedDataset:
    """Generate n feasible solved scenarios under out_dir (created fresh)."""
    base_opts = opf_options or OpfOptions()
    base_solution = solve_opf(case, base_opts)
    if not base_solution.feasible:
        raise DatasetError(
            f"base case OPF is infeasible ({base_solution.message}); "
            "refusing to generate a dataset from it"
        )

    root = Path(out_dir)
    for sub in ("scenarios", "embeddings", "solutions", "truth", "rejected"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    # warm-start every mutated solve from the base optimum
    opts_fields = asdict(base_opts)
    opts_fields["x0"] = base_solution.controls
    warm_opts = OpfOptions(**opts_fields)

    entries: list[SolvedEntry] = []
    rejected: list[int] = []
    manifest_entries = []
    index = 0
    max_draws = max(n * max_draws_factor, n + 10)
    while len(entries) < n:
        if index >= max_draws:
            raise DatasetError(
                f"only {len(entries)} feasible scenarios after {index} draws"
            )
        scenario = mutate(case, spec, index)
        solution = solve_opf(scenario, warm_opts)
        if not solution.feasible:
            rejected.append(index)
            (root / "rejected" / f"{index}.json").write_text(
                json.dumps(
                    {
                        "index": index,
                        "reason": solution.message or "constraint violation",
                        "max_violation_pu": solution.max_violation_pu,
                    },
                    sort_keys=True,
                )
            )
            index += 1
            continue

        grid_text = embed_grid(to_hetero(scenario), fmt)
        solution_text = encode_solution(solution, fmt.decimals)
        (root / "scenarios" / f"{index}.m").write_text(write_matpower(scenario))
        (root / "embeddings" / f"{index}.json").write_text(grid_text)
        (root / "solutions" / f"{index}.json").write_text(solution_text)
        (root / "truth" / f"{index}.json").write_text(
            json.dumps(_truth_doc(solution), sort_keys=True)
        )
        manifest_entries.append(
            {
                "index": index,
                "objective_cost": solution.objective_cost,
                "max_violation_pu": solution.max_violation_pu,
            }
        )
        entries.append(SolvedEntry(index, scenario, grid_text, solution_text, solution))
        index += 1

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "case": case.name,
        "n": n,
        "format": {"kind": fmt.kind, "decimals": fmt.decimals},
        "mutation": {
            "distribution": spec.distribution,
            "relative_halfwidth": spec.relative_halfwidth,
            "targets": spec.targets,
            "seed": spec.seed,
        },
        "entries": manifest_entries,
        "rejected": rejected,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return SolvedDataset(root=root, entries=entries, rejected=rejected)


def load_solved_dataset(root: str | Path) -> SolvedDataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"{root} is not a dataset directory (no manifest.json)") from None
    entries = []
    for meta in manifest["entries"]:
        i = meta["index"]
        entries.append(
            SolvedEntry(
                index=i,
                case=parse_matpower((root / "scenarios" / f"{i}.m").read_text()),
                grid_text=(root / "embeddings" / f"{i}.json").read_text(),
                solution_text=(root / "solutions" / f"{i}.json").read_text(),
                solution=_truth_from_doc(json.loads((root / "truth" / f"{i}.json").read_text())),
            )
        )
    return SolvedDataset(root=root, entries=entries, rejected=list(manifest["rejected"]))


def export_finetune_jsonl(
    dataset: SolvedDataset,
    out_path: str | Path | None = None,
    config: FinetuneConfig = FinetuneConfig(),
    max_line_chars: int = 500_000,
) -> Path:
    """One chat-format training line per solved entry, plus a config sidecar."""
    out_path = Path(out_path) if out_path else dataset.root / "finetune.jsonl"
    lines = []
    for e in dataset.entries:
        line = json.dumps(
            {
                "messages": [
                    {"role": "system", "content": SYSTEM_PROMPT},
                    {"role": "user", "content": EXAMPLE_INPUT_PREFIX + e.grid_text},
                    {"role": "assistant", "content": EXAMPLE_OUTPUT_PREFIX + e.solution_text},
                ]
            },
            sort_keys=True,
        )
        if len(line) > max_line_chars:
            raise DatasetError(
                f"entry {e.index}: training line is {len(line)} chars, "
                f"budget is {max_line_chars}"
            )
        lines.append(line)
    out_path.write_text("\n".join(lines) + "\n")

    sidecar = out_path.with_name("finetune_config.json")
    sidecar.write_text(json.dumps(asdict(config), sort_keys=True, indent=1))
    return out_path

"""Scoring of predicted OPF solutions and the benchmark loop around it.

Errors are computed in per-unit (powers divided by the system base) and
radians, so the three MSE figures are dimensionless and comparable across
grid sizes. Invalid trials (unparseable or ill-typed responses) are excluded
from the MSE means and reported through the valid fraction instead.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .embedding import InvalidResponse, SolutionDoc, parse_solution_doc
from .llm_protocol import build_sequence, validate_sequence
from .solvers import OpfSolution

REPORT_SCHEMA = "gridprompt/report/v1"
LOG_SCHEMA = "gridprompt/trial/v1"


class ScoringError(Exception):
    """Prediction does not cover the case's components id-for-id."""


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    valid: bool
    mse_gen: float | None
    mse_slack: float | None
    mse_bus: float | None
    response_chars: int
    latency_ms: float
    reason: str = ""


@dataclass(frozen=True)
class EvalReport:
    n_trials: int
    valid_fraction: float
    mean_mse_gen: float | None
    mean_mse_slack: float | None
    mean_mse_bus: float | None
    config: dict

    def to_json(self) -> str:
        doc = {"schema": REPORT_SCHEMA, **asdict(self)}
        return json.dumps(doc, sort_keys=True, indent=1)


def _pairs_mse(pred, truth, scale_a: float, scale_b: float, what: str) -> float:
    """Mean squared error over id-matched (a, b) value pairs."""
    pred_by_id = {i: (a, b) for i, a, b in pred}
    if len(pred_by_id) != len(pred):
        raise ScoringError(f"duplicate ids in predicted {what}")
    errs = []
    for i, a, b in truth:
        if i not in pred_by_id:
            raise ScoringError(f"missing or invalid values: {what} id {i}")
        pa, pb = pred_by_id.pop(i)
        errs += [((pa - a) / scale_a) ** 2, ((pb - b) / scale_b) ** 2]
    if pred_by_id:
        raise ScoringError(f"missing or invalid values: unknown {what} ids {sorted(pred_by_id)}")
    return float(np.mean(errs)) if errs else 0.0


def score(
    pred: SolutionDoc, truth: OpfSolution, base_mva: float
) -> tuple[float, float, float]:
    """(mse_gen, mse_slack, mse_bus): powers in per-unit, angles in radians."""
    deg = 180.0 / np.pi
    mse_gen = _pairs_mse(pred.gen, truth.gen, base_mva, base_mva, "gen")
    mse_slack = _pairs_mse(pred.slack, (truth.slack,), base_mva, base_mva, "slack")
    mse_bus = _pairs_mse(pred.bus, truth.bus, 1.0, deg, "bus")
    return mse_gen, mse_slack, mse_bus


@dataclass(frozen=True)
class BenchmarkTrial:
    """One trial's inputs: context pairs, query text, and the query's truth."""
    trial_id: int
    context: list[tuple[str, str]]
    query_text: str
    truth: OpfSolution
    base_mva: float


def make_trials(entries, trials: int, context_size: int, seed: int) -> list[BenchmarkTrial]:
    """Partition solved entries into disjoint per-trial context + query sets.

    ``entries`` is a sequence of objects with .grid_text, .solution_text and
    .solution (ground truth); the split is a seeded permutation so runs are
    reproducible from (dataset, seed) alone.
    """
    need = trials * (context_size + 1)
    if len(entries) < need:
        raise ValueError(
            f"dataset has {len(entries)} solved entries, "
            f"{need} needed for {trials} trials with context {context_size}"
        )
    order = np.random.default_rng(seed).permutation(len(entries))
    out = []
    for t in range(trials):
        chunk = [entries[i] for i in order[t * (context_size + 1) : (t + 1) * (context_size + 1)]]
        query = chunk[-1]
        out.append(
            BenchmarkTrial(
                trial_id=t,
                context=[(e.grid_text, e.solution_text) for e in chunk[:-1]],
                query_text=query.grid_text,
                truth=query.solution,
                base_mva=query.case.base_mva,
            )
        )
    return out


def run_trial(trial: BenchmarkTrial, backend, max_chars: int | None = None) -> TrialRecord:
    seq = build_sequence(trial.context, trial.query_text, max_chars=max_chars)
    validate_sequence(seq)
    start = time.monotonic()
    response = backend.complete(seq)
    latency_ms = (time.monotonic() - start) * 1000.0
    try:
        pred = parse_solution_doc(response)
        mse_gen, mse_slack, mse_bus = score(pred, trial.truth, trial.base_mva)
    except (InvalidResponse, ScoringError) as exc:
        return TrialRecord(
            trial_id=trial.trial_id, valid=False,
            mse_gen=None, mse_slack=None, mse_bus=None,
            response_chars=len(response), latency_ms=latency_ms, reason=str(exc),
        )
    return TrialRecord(
        trial_id=trial.trial_id, valid=True,
        mse_gen=mse_gen, mse_slack=mse_slack, mse_bus=mse_bus,
        response_chars=len(response), latency_ms=latency_ms,
    )


def aggregate(records: list[TrialRecord], config: dict) -> EvalReport:
    n = len(records)
    valid = [r for r in records if r.valid]

    def mean(attr):
        if not valid:
            return None
        return float(np.mean([getattr(r, attr) for r in valid]))

    return EvalReport(
        n_trials=n,
        valid_fraction=len(valid) / n if n else 0.0,
        mean_mse_gen=mean("mse_gen"),
        mean_mse_slack=mean("mse_slack"),
        mean_mse_bus=mean("mse_bus"),
        config=config,
    )


def run_benchmark(
    entries,
    backend,
    trials: int,
    context_size: int,
    seed: int = 0,
    concurrency: int = 4,
    max_chars: int | None = None,
    log_path: str | Path | None = None,
    config: dict | None = None,
) -> tuple[EvalReport, list[TrialRecord]]:
    """Run all trials (possibly concurrently) and aggregate.

    The per-trial log is written in trial order through a single writer, so
    the file bytes are deterministic regardless of completion order.
    """
    plan = make_trials(entries, trials, context_size, seed)
    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            records = list(pool.map(lambda t: run_trial(t, backend, max_chars), plan))
    else:
        records = [run_trial(t, backend, max_chars) for t in plan]
    records.sort(key=lambda r: r.trial_id)

    if log_path is not None:
        with open(log_path, "a") as fh:
            for r in records:
                fh.write(json.dumps({"schema": LOG_SCHEMA, **asdict(r)}, sort_keys=True) + "\n")

    echo = dict(config or {})
    echo.update({"trials": trials, "context_size": context_size, "seed": seed})
    return aggregate(records, echo), records


def reaggregate_log(log_path: str | Path, config: dict | None = None) -> EvalReport:
    """Rebuild the report from a JSONL trial log; must match the original."""
    records = []
    for line in Path(log_path).read_text().splitlines():
        doc = json.loads(line)
        doc.pop("schema", None)
        records.append(TrialRecord(**doc))
    return aggregate(records, dict(config or {}))

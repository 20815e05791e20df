"""Experiment grids: (benchmark x policy x parameter x seed) cells and their output files.

Layout under the output directory::

    <benchmark>/<kind>/<parameter>/seed-<seed>.anytime.csv
    <benchmark>/<kind>/<parameter>/seed-<seed>.records.csv
    <benchmark>/<kind>/<parameter>/seed-<seed>.summary.json

A cell is skipped on resume when its summary carries the same cell digest
(hash of the benchmark file contents and every run setting) and both trace
files are present.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .curves import Benchmark, file_digest, load_benchmark
from .lce import EngineConfig, LceEngine
from .policies import IEPOCH_SWEEP, LCE_SWEEP, SHA_SWEEP, Kind, PolicySpec
from .simulator import RunConfig, SimulationTrace, objective_point, run

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = tuple(range(10))
DEFAULT_SWEEPS = {Kind.IEPOCH: IEPOCH_SWEEP, Kind.SHA: SHA_SWEEP, Kind.LCE: LCE_SWEEP}


def default_policies(i_max: int = 100) -> list[PolicySpec]:
    specs = [PolicySpec(Kind.IEPOCH, i) for i in range(1, i_max + 1)]
    specs += [PolicySpec(Kind.LCE, v) for v in LCE_SWEEP]
    specs += [PolicySpec(Kind.SHA, v) for v in SHA_SWEEP]
    return specs


def _expand_policies(raw) -> list[PolicySpec] | None:
    if raw is None:
        return None
    specs = []
    for kind, values in raw.items():
        kind = Kind(kind)
        if values == "default":
            values = DEFAULT_SWEEPS[kind]
        elif isinstance(values, dict):
            # {"from": 1, "to": 100} for integer i-Epoch ranges
            values = range(int(values["from"]), int(values["to"]) + 1)
        specs.extend(PolicySpec(kind, v) for v in values)
    return specs


@dataclass
class ExperimentGrid:
    benchmarks: list[Path]
    # None: the default sweeps, with i-Epoch spanning 1..i_max of each benchmark
    policies: list[PolicySpec] | None = None
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    n_iterations: int = 200
    top_k: int = 3
    out: Path = Path("results")
    schema: str = "canonical"
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        if not self.benchmarks:
            raise ValueError("grid lists no benchmarks")
        if self.policies is not None and not self.policies:
            raise ValueError("grid lists no policies")
        if not self.seeds:
            raise ValueError("grid lists no seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path = Path(".")) -> "ExperimentGrid":
        known = {"benchmarks", "policies", "seeds", "n_iterations", "top_k", "out", "schema", "engine"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown grid fields: {sorted(unknown)}")
        kwargs = {
            "benchmarks": [base_dir / Path(p) for p in data.get("benchmarks", [])],
            "policies": _expand_policies(data.get("policies")),
            "engine": EngineConfig.from_dict(data.get("engine")),
        }
        for key in ("n_iterations", "top_k", "schema"):
            if key in data:
                kwargs[key] = data[key]
        if "seeds" in data:
            kwargs["seeds"] = [int(s) for s in data["seeds"]]
        if "out" in data:
            kwargs["out"] = base_dir / Path(data["out"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentGrid":
        path = Path(path)
        with path.open() as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


@dataclass(frozen=True)
class Cell:
    benchmark_path: str
    benchmark_digest: str
    benchmark_name: str
    policy: PolicySpec
    seed: int
    n_iterations: int
    top_k: int
    schema: str
    engine: EngineConfig

    def digest(self) -> str:
        payload = {
            "benchmark_digest": self.benchmark_digest,
            "schema": self.schema,
            "policy": self.policy.kind.value,
            "parameter": self.policy.label,
            "seed": self.seed,
            "n_iterations": self.n_iterations,
            "top_k": self.top_k,
        }
        if self.policy.kind is Kind.LCE:
            payload["engine"] = self.engine.to_dict()
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def stem(self, out: Path) -> Path:
        return out / self.benchmark_name / self.policy.kind.value / self.policy.label / f"seed-{self.seed}"


def grid_cells(grid: ExperimentGrid) -> list[Cell]:
    cells = []
    for path in grid.benchmarks:
        bench = _load(str(path), grid.schema)
        digest = file_digest(path)
        for spec in grid.policies or default_policies(bench.i_max):
            spec.validate_for(bench.i_max)
            for seed in grid.seeds:
                cells.append(Cell(
                    str(path), digest, bench.name, spec, seed,
                    grid.n_iterations, grid.top_k, grid.schema, grid.engine,
                ))
    return cells


# per-process caches; workers share nothing but the immutable benchmark files
_BENCHMARKS: dict[tuple[str, str], Benchmark] = {}
_ENGINES: dict[str, LceEngine] = {}


def _load(path: str, schema: str) -> Benchmark:
    key = (path, schema)
    if key not in _BENCHMARKS:
        _BENCHMARKS[key] = load_benchmark(path, schema)
    return _BENCHMARKS[key]


def _engine(config: EngineConfig) -> LceEngine:
    key = json.dumps(config.to_dict(), sort_keys=True)
    if key not in _ENGINES:
        _ENGINES[key] = LceEngine(config)
    return _ENGINES[key]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(trace: SimulationTrace, stem: Path, provenance: str) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{stem}.anytime.csv", "w", newline="") as fh:
        fh.write(f"# {provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "cumulative_epochs", "final_valid_error", "final_test_error", "selected_id"))
        for e in trace.anytime:
            w.writerow((e.iteration, e.cumulative_epochs, _fmt(e.final_valid_error),
                        _fmt(e.final_test_error), e.selected_id))
    with open(f"{stem}.records.csv", "w", newline="") as fh:
        fh.write(f"# {provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("position", "candidate_id", "stop_epoch", "observed_valid_error"))
        for r in trace.records:
            w.writerow((r.position + 1, r.candidate_id, r.stop_epoch, _fmt(r.observed_valid_error)))


def summary_record(cell: Cell, trace: SimulationTrace, out: Path) -> dict:
    y_l, y_i = objective_point(trace)
    return {
        "benchmark": cell.benchmark_name,
        # relative to the results directory, so archived results can move with their inputs
        "benchmark_path": os.path.relpath(os.path.abspath(cell.benchmark_path), os.path.abspath(out)),
        "benchmark_digest": cell.benchmark_digest,
        "schema": cell.schema,
        "policy": cell.policy.kind.value,
        "parameter": cell.policy.label,
        "seed": cell.seed,
        "n_iterations": len(trace.records),
        "top_k": cell.top_k,
        "y_L": y_l,
        "y_I": y_i,
        "evaluation_epochs": trace.evaluation_epochs,
        "cell_digest": cell.digest(),
    }


def is_complete(cell: Cell, out: Path) -> bool:
    stem = cell.stem(out)
    summary = Path(f"{stem}.summary.json")
    if not (summary.exists() and Path(f"{stem}.anytime.csv").exists() and Path(f"{stem}.records.csv").exists()):
        return False
    try:
        return json.loads(summary.read_text()).get("cell_digest") == cell.digest()
    except (OSError, json.JSONDecodeError):
        return False


def run_cell(cell: Cell, out: Path) -> dict:
    bench = _load(cell.benchmark_path, cell.schema)
    engine = _engine(cell.engine) if cell.policy.kind is Kind.LCE else None
    config = RunConfig(bench, cell.policy, cell.seed, cell.n_iterations, cell.top_k, cell.engine)
    trace = run(config, engine)
    stem = cell.stem(out)
    digest = cell.digest()
    write_trace(trace, stem, f"cell_digest={digest} seed={cell.seed}")
    record = summary_record(cell, trace, out)
    # summary last: its presence marks the cell complete
    tmp = Path(f"{stem}.summary.json.tmp")
    tmp.write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, f"{stem}.summary.json")
    return record


def _run_cell_safe(cell: Cell, out: Path):
    try:
        run_cell(cell, out)
        return cell, None
    except Exception as exc:  # noqa: BLE001 - recorded per cell, the sweep continues
        logger.exception("cell %s failed", cell.stem(out))
        return cell, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    computed: int = 0
    skipped: int = 0
    failed: list[tuple[Cell, str]] = field(default_factory=list)


def simulate(grid: ExperimentGrid, jobs: int = 1, resume: bool = True) -> SweepResult:
    """Run every grid cell not already complete; failures are collected, not raised."""
    out = Path(grid.out)
    result = SweepResult()
    todo = []
    for cell in grid_cells(grid):
        if resume and is_complete(cell, out):
            result.skipped += 1
        else:
            todo.append(cell)
    if jobs <= 1:
        outcomes = (_run_cell_safe(c, out) for c in todo)
        _collect(outcomes, result)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            _collect(pool.map(_run_cell_safe, todo, [out] * len(todo)), result)
    return result


def _collect(outcomes, result: SweepResult) -> None:
    for cell, error in outcomes:
        if error is None:
            result.computed += 1
        else:
            result.failed.append((cell, error))
    if result.failed:
        logger.warning("%d cells failed", len(result.failed))

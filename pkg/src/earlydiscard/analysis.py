"""Turn a results directory into plot-ready and Table-4-shaped tables.

Outputs (all CSV with a provenance comment line):

- ``anytime.csv``: mean and standard error per iteration per cell
- ``cells.csv``: per-setting means and standard errors of (y_L, y_I)
- ``pareto.csv``: every setting with per-method and union front flags
- ``relative_hvi.csv``: one row per benchmark, one column per method
- ``average_rank.csv``: mean rank of each method across benchmarks
- ``curve_ranks/<benchmark>.csv`` and ``curve_rank_summary.csv``
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curves import load_benchmark
from .moo import (
    MethodCell,
    ZeroHypervolumeError,
    average_rank,
    curve_rank_export,
    make_cell,
    mean_stderr,
    pareto_front,
    relative_hvi,
)

logger = logging.getLogger(__name__)

METHOD_ORDER = ("sha", "lce", "iepoch")
CURVE_SAMPLE = 500


class MissingResultsError(FileNotFoundError):
    pass


def _param_key(label: str) -> float:
    return float(label)


def _method_key(method: str):
    return (METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER), method)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write(path: Path, provenance: str, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# {provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> list[dict]:
    """Read one of the CSV outputs, skipping comment lines."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class Summary:
    benchmark: str
    benchmark_path: str
    policy: str
    parameter: str
    seed: int
    y_L: float
    y_I: int
    stem: Path
    schema: str = "canonical"


def load_summaries(results_dir) -> list[Summary]:
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise MissingResultsError(f"results directory {results_dir} does not exist")
    out = []
    for path in sorted(results_dir.rglob("*.summary.json")):
        data = json.loads(path.read_text())
        stem = Path(str(path)[: -len(".summary.json")])
        bench_path = Path(data["benchmark_path"])
        if not bench_path.is_absolute():
            bench_path = results_dir / bench_path
        out.append(Summary(
            data["benchmark"], str(bench_path), data["policy"], data["parameter"],
            int(data["seed"]), float(data["y_L"]), int(data["y_I"]), stem,
            data.get("schema", "canonical"),
        ))
    if not out:
        raise MissingResultsError(f"no summary records under {results_dir}")
    return out


def _provenance(summaries: list[Summary]) -> str:
    h = hashlib.sha256()
    for s in summaries:
        h.update(f"{s.benchmark}|{s.policy}|{s.parameter}|{s.seed}|{s.y_L!r}|{s.y_I}\n".encode())
    return f"results_digest={h.hexdigest()} n_records={len(summaries)}"


def _read_anytime(stem: Path) -> np.ndarray:
    rows = read_table(f"{stem}.anytime.csv")
    return np.array(
        [(float(r["cumulative_epochs"]), float(r["final_valid_error"]), float(r["final_test_error"])) for r in rows]
    )


def analyze(results_dir, out_dir, curve_sample: int = CURVE_SAMPLE) -> dict[str, Path]:
    """Write every analysis table; returns the written paths by table name."""
    summaries = load_summaries(results_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = _provenance(summaries)
    written: dict[str, Path] = {}

    # benchmark -> method -> parameter -> [Summary]
    groups: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    bench_paths: dict[str, tuple[str, str]] = {}
    for s in summaries:
        groups[s.benchmark][s.policy][s.parameter].append(s)
        bench_paths.setdefault(s.benchmark, (s.benchmark_path, s.schema))
    benchmarks = sorted(groups)

    def ordered(bench):
        for method in sorted(groups[bench], key=_method_key):
            for param in sorted(groups[bench][method], key=_param_key):
                yield method, param, sorted(groups[bench][method][param], key=lambda s: s.seed)

    # anytime aggregates
    rows = []
    for bench in benchmarks:
        for method, param, runs in ordered(bench):
            traces = [_read_anytime(s.stem) for s in runs]
            length = min(len(t) for t in traces)
            for k in range(length):
                stats = [mean_stderr([t[k, col] for t in traces]) for col in range(3)]
                rows.append((bench, method, param, k + 1, len(traces), *stats[0], *stats[1], *stats[2]))
    written["anytime"] = out_dir / "anytime.csv"
    _write(written["anytime"], prov, (
        "benchmark", "method", "parameter", "iteration", "n_seeds",
        "mean_cumulative_epochs", "stderr_cumulative_epochs",
        "mean_final_valid_error", "stderr_final_valid_error",
        "mean_final_test_error", "stderr_final_test_error",
    ), rows)

    # per-setting cells, fronts and hypervolumes
    cell_rows, pareto_rows, hvi_tables = [], [], {}
    for bench in benchmarks:
        cells: list[MethodCell] = []
        for method, param, runs in ordered(bench):
            cell = make_cell(method, param, [(s.y_L, s.y_I) for s in runs])
            cells.append(cell)
            cell_rows.append((bench, method, param, cell.n_seeds, cell.mean_yL, cell.stderr_yL,
                              cell.mean_yI, cell.stderr_yI))
        per_method: dict[str, list] = defaultdict(list)
        for c in cells:
            per_method[c.method].append(c.point)
        fronts = {m: set(pareto_front(pts)) for m, pts in per_method.items()}
        union = set(pareto_front([p for pts in per_method.values() for p in pts]))
        for c in cells:
            pareto_rows.append((bench, c.method, c.parameter, c.mean_yL, c.mean_yI,
                                int(c.point in fronts[c.method]), int(c.point in union)))
        try:
            hvi_tables[bench] = relative_hvi(per_method, cells)
        except ZeroHypervolumeError as exc:
            logger.warning("%s: %s", bench, exc)

    written["cells"] = out_dir / "cells.csv"
    _write(written["cells"], prov, ("benchmark", "method", "parameter", "n_seeds", "mean_yL",
                                    "stderr_yL", "mean_yI", "stderr_yI"), cell_rows)
    written["pareto"] = out_dir / "pareto.csv"
    _write(written["pareto"], prov, ("benchmark", "method", "parameter", "yL", "yI", "on_front",
                                     "on_union_front"), pareto_rows)

    methods = sorted({m for t in hvi_tables.values() for m in t}, key=_method_key)
    written["relative_hvi"] = out_dir / "relative_hvi.csv"
    _write(written["relative_hvi"], prov, ("benchmark", *methods),
           [(b, *(hvi_tables[b].get(m, float("nan")) for m in methods)) for b in sorted(hvi_tables)])

    complete = [hvi_tables[b] for b in sorted(hvi_tables) if set(hvi_tables[b]) == set(methods)]
    if len(complete) < len(hvi_tables):
        logger.warning("average rank uses %d of %d benchmarks (others lack some methods)",
                       len(complete), len(hvi_tables))
    ranks = average_rank(complete) if complete else {}
    written["average_rank"] = out_dir / "average_rank.csv"
    _write(written["average_rank"], prov, ("method", "average_rank", "n_benchmarks"),
           [(m, ranks[m], len(complete)) for m in methods if m in ranks])

    # learning-curve rank diagnostics
    summary_rows = []
    for bench in benchmarks:
        path, schema = bench_paths[bench]
        if not Path(path).exists():
            logger.warning("benchmark file %s not found; skipping curve ranks", path)
            continue
        benchmark = load_benchmark(path, schema)
        report = curve_rank_export(benchmark, min(curve_sample, len(benchmark)), seed=0)
        i_max = benchmark.i_max
        target = out_dir / "curve_ranks" / f"{bench}.csv"
        _write(target, prov, ("candidate_id", "final_rank", "worse_than_constant",
                              *(f"valid_{e}" for e in range(1, i_max + 1))),
               [(r.candidate_id, r.final_rank, int(r.worse_than_constant),
                 *(float(v) for v in r.valid_error)) for r in report.records])
        written[f"curve_ranks/{bench}"] = target
        summary_rows.append((bench, len(benchmark), len(report.records),
                             report.fraction_worse_than_constant, report.spearman_first_last))
    written["curve_rank_summary"] = out_dir / "curve_rank_summary.csv"
    _write(written["curve_rank_summary"], prov, ("benchmark", "n_curves", "sample_size",
                                                 "fraction_worse_than_constant", "spearman_first_last"),
           summary_rows)
    return written

"""Pareto fronts and log-scaled hypervolume over (final error, total epochs).

Both objectives are minimised. Hypervolumes are computed after ``log10`` of
both coordinates and of the reference point, so that improvements of very
different magnitudes count alike.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata, spearmanr

from .curves import Benchmark

# y_L may round to zero; log10 needs a positive value
LOG_FLOOR = 1e-12


class ZeroHypervolumeError(ValueError):
    pass


@dataclass(frozen=True)
class MethodCell:
    method: str
    parameter: str
    mean_yL: float
    stderr_yL: float
    mean_yI: float
    stderr_yI: float
    n_seeds: int

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("a cell needs at least one seed")
        if self.stderr_yL < 0 or self.stderr_yI < 0:
            raise ValueError("standard errors must be non-negative")

    @property
    def point(self) -> tuple[float, float]:
        return (self.mean_yL, self.mean_yI)


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard error (ddof=1); a single value has zero error."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("no values")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def make_cell(method: str, parameter: str, points: Sequence[tuple[float, float]]) -> MethodCell:
    """Aggregate per-seed (y_L, y_I) points of one method setting."""
    yl, yi = zip(*points)
    m_l, s_l = mean_stderr(yl)
    m_i, s_i = mean_stderr(yi)
    return MethodCell(method, parameter, m_l, s_l, m_i, s_i, len(points))


def dominates(p, q) -> bool:
    return p[0] <= q[0] and p[1] <= q[1] and (p[0] < q[0] or p[1] < q[1])


def pareto_front(points: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated subset, duplicates collapsed, sorted by ascending y_I."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points}, key=lambda p: (p[1], p[0]))
    if not pts:
        raise ValueError("pareto_front needs at least one point")
    front = []
    best_l = math.inf
    for yl, yi in pts:
        # sorted by y_I then y_L: a point survives iff it strictly improves y_L
        if yl < best_l:
            front.append((yl, yi))
            best_l = yl
    return front


def reference_point(cells: Sequence[MethodCell]) -> tuple[float, float]:
    """Component-wise maximum of mean + standard error over all cells."""
    if not cells:
        raise ValueError("reference_point needs at least one cell")
    return (
        max(c.mean_yL + c.stderr_yL for c in cells),
        max(c.mean_yI + c.stderr_yI for c in cells),
    )


def _log10_point(yl: float, yi: float) -> tuple[float, float]:
    yl = max(yl, LOG_FLOOR)
    if yi <= 0:
        raise ValueError(f"y_I must be positive for the log transform, got {yi}")
    return math.log10(yl), math.log10(yi)


def hypervolume_2d(front, ref, log: bool = True) -> float:
    """Area dominated by ``front`` inside the box bounded by ``ref``.

    Points outside the box contribute nothing. With ``log`` (default) both
    coordinates and the reference are mapped through ``log10`` after clipping
    y_L at ``LOG_FLOOR``.
    """
    if log:
        pts = [_log10_point(*p) for p in front]
        r_l, r_i = _log10_point(*ref)
    else:
        pts = [(float(p[0]), float(p[1])) for p in front]
        r_l, r_i = float(ref[0]), float(ref[1])
    inside = [p for p in pts if p[0] < r_l and p[1] < r_i]
    if not inside:
        return 0.0
    volume = 0.0
    front_pts = pareto_front(inside)
    for k, (yl, yi) in enumerate(front_pts):
        next_i = front_pts[k + 1][1] if k + 1 < len(front_pts) else r_i
        volume += (next_i - yi) * (r_l - yl)
    return volume


def relative_hvi(
    per_method_points: Mapping[str, Sequence[tuple[float, float]]],
    cells: Sequence[MethodCell],
) -> dict[str, float]:
    """Each method's hypervolume over that of the union of all methods' points.

    The reference point comes from ``cells`` (all methods, all settings).
    """
    if not per_method_points:
        raise ValueError("relative_hvi needs at least one method")
    ref = reference_point(cells)
    union = [p for pts in per_method_points.values() for p in pts]
    total = hypervolume_2d(pareto_front(union), ref)
    if total <= 0.0:
        raise ZeroHypervolumeError("union front has zero hypervolume against the reference point")
    return {
        method: hypervolume_2d(pareto_front(pts), ref) / total
        for method, pts in per_method_points.items()
    }


def average_rank(tables: Sequence[Mapping[str, float]]) -> dict[str, float]:
    """Mean per-table rank; 1 is the largest score and ties share their mean position."""
    if not tables:
        raise ValueError("no tables")
    methods = sorted(tables[0])
    for t in tables:
        if set(t) != set(methods):
            raise ValueError("every table must contain the same methods")
    totals = np.zeros(len(methods))
    for t in tables:
        totals += rankdata([-t[m] for m in methods], method="average")
    return {m: float(v / len(tables)) for m, v in zip(methods, totals)}


@dataclass(frozen=True)
class CurveRankRecord:
    candidate_id: str
    final_rank: int
    valid_error: np.ndarray
    worse_than_constant: bool


@dataclass(frozen=True)
class CurveRankReport:
    records: tuple[CurveRankRecord, ...]
    fraction_worse_than_constant: float
    spearman_first_last: float


def curve_rank_export(benchmark: Benchmark, sample_size: int, seed: int = 0) -> CurveRankReport:
    """Sampled curves ranked by final validation error, plus benchmark-level diagnostics.

    A final error above 1.0 is worse than the constant predictor. The fraction
    of such curves and the Spearman correlation between epoch-1 and final
    validation errors are computed over the whole benchmark.
    """
    n = len(benchmark)
    if not 1 <= sample_size <= n:
        raise ValueError(f"sample_size must lie in [1, {n}], got {sample_size}")
    valid = benchmark.valid_matrix()
    final = valid[:, -1]
    idx = np.sort(np.random.default_rng(seed).choice(n, size=sample_size, replace=False))
    ranks = rankdata(final[idx], method="ordinal").astype(int)
    records = tuple(
        CurveRankRecord(
            benchmark.curves[i].candidate_id,
            int(rank),
            valid[i].copy(),
            bool(final[i] > 1.0),
        )
        for i, rank in zip(idx, ranks)
    )
    if n > 1 and np.ptp(valid[:, 0]) > 0 and np.ptp(final) > 0:
        rho = float(spearmanr(valid[:, 0], final).statistic)
    else:
        rho = float("nan")
    return CurveRankReport(records, float(np.mean(final > 1.0)), rho)

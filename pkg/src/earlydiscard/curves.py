"""Learning-curve benchmarks: canonical file I/O, ingestion filters and a synthetic generator.

The canonical file is a CSV with one row per (candidate, epoch)::

    # name=protein
    # task_kind=regression
    candidate_id,epoch,train_error,valid_error,test_error
    c0,1,0.93,0.95,0.96
    ...

Comment lines start with ``#`` and carry metadata. Values are generalization
errors ``1 - R^2``. Other schemas only differ in what the three value columns
store; see ``SCHEMAS``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .lce import mmf4_eval_array

logger = logging.getLogger(__name__)

TASK_KINDS = ("regression", "classification")
COLUMNS = ("candidate_id", "epoch", "train_error", "valid_error", "test_error")
R2_COLUMNS = ("candidate_id", "epoch", "train_r2", "valid_r2", "test_r2")

# schema id -> (header, stored value -> generalization error)
SCHEMAS = {
    "canonical": (COLUMNS, lambda v: v),
    "r2": (R2_COLUMNS, lambda v: 1.0 - v),
}

MIN_PROTOCOL_CURVES = 200


class BenchmarkError(Exception):
    pass


class BenchmarkParseError(BenchmarkError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class SchemaMismatchError(BenchmarkError):
    pass


class EmptyBenchmarkError(BenchmarkError):
    pass


@dataclass(frozen=True, eq=False)
class LearningCurve:
    candidate_id: str
    train_error: np.ndarray
    valid_error: np.ndarray
    test_error: np.ndarray

    def __post_init__(self):
        for name in ("train_error", "valid_error", "test_error"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.valid_error.shape[0]
        if n < 1 or self.train_error.shape != (n,) or self.test_error.shape != (n,):
            raise ValueError(f"curve {self.candidate_id}: error vectors must share one length >= 1")

    @property
    def epochs(self) -> int:
        return int(self.valid_error.shape[0])

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.train_error))
            and np.all(np.isfinite(self.valid_error))
            and np.all(np.isfinite(self.test_error))
        )

    def __eq__(self, other):
        if not isinstance(other, LearningCurve):
            return NotImplemented
        return (
            self.candidate_id == other.candidate_id
            and np.array_equal(self.train_error, other.train_error)
            and np.array_equal(self.valid_error, other.valid_error)
            and np.array_equal(self.test_error, other.test_error)
        )

    __hash__ = None


@dataclass(frozen=True)
class Benchmark:
    name: str
    task_kind: str
    curves: tuple[LearningCurve, ...]
    i_max: int
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}, got {self.task_kind!r}")
        if not self.curves:
            raise EmptyBenchmarkError(f"benchmark {self.name!r} has no curves")
        for curve in self.curves:
            if curve.epochs != self.i_max:
                raise ValueError(
                    f"curve {curve.candidate_id} has {curve.epochs} epochs, benchmark i_max is {self.i_max}"
                )
            if not curve.is_finite():
                raise ValueError(f"curve {curve.candidate_id} contains non-finite values")
        index = {c.candidate_id: c for c in self.curves}
        if len(index) != len(self.curves):
            raise ValueError("duplicate candidate ids")
        object.__setattr__(self, "_index", index)
        if len(self.curves) < MIN_PROTOCOL_CURVES:
            logger.debug(
                "benchmark %r has %d curves, fewer than the %d-iteration protocol",
                self.name, len(self.curves), MIN_PROTOCOL_CURVES,
            )

    def __len__(self) -> int:
        return len(self.curves)

    def curve(self, candidate_id: str) -> LearningCurve:
        return self._index[candidate_id]

    def valid_matrix(self) -> np.ndarray:
        return np.stack([c.valid_error for c in self.curves])


@dataclass
class FilterReport:
    n_candidates: int = 0
    dropped: Counter = field(default_factory=Counter)

    @property
    def n_kept(self) -> int:
        return self.n_candidates - sum(self.dropped.values())

    def summary(self) -> str:
        lines = [f"candidates_read: {self.n_candidates}", f"candidates_kept: {self.n_kept}"]
        lines.append(f"candidates_dropped: {sum(self.dropped.values())}")
        for reason in sorted(self.dropped):
            lines.append(f"  {reason}: {self.dropped[reason]}")
        return "\n".join(lines)


def _read_metadata(line: str, meta: dict) -> None:
    body = line[1:].strip()
    if "=" in body:
        key, _, value = body.partition("=")
        meta[key.strip()] = value.strip()


def load_benchmark(
    path,
    schema: str = "canonical",
    *,
    name: str | None = None,
    task_kind: str | None = None,
    i_max: int | None = None,
    report: FilterReport | None = None,
) -> Benchmark:
    """Read and validate a tabulated benchmark.

    Candidates with any non-finite value, or fewer epochs than ``i_max``, are
    dropped and counted in ``report``. ``i_max`` defaults to the largest epoch
    in the file. Metadata comment lines supply ``name`` and ``task_kind`` when
    not given explicitly.
    """
    if schema not in SCHEMAS:
        raise SchemaMismatchError(f"unknown schema {schema!r}; known: {sorted(SCHEMAS)}")
    header, convert = SCHEMAS[schema]
    path = Path(path)
    report = report if report is not None else FilterReport()
    meta: dict = {}
    rows: dict[str, dict[int, tuple[float, float, float]]] = {}
    order: list[str] = []

    with path.open(newline="") as fh:
        seen_header = False
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                _read_metadata(stripped, meta)
                continue
            fields = next(csv.reader([stripped]))
            if not seen_header:
                if tuple(f.strip() for f in fields) != header:
                    raise SchemaMismatchError(
                        f"{path}:{line_no}: header {fields} does not match schema {schema!r} {list(header)}"
                    )
                seen_header = True
                continue
            if len(fields) != len(header):
                raise BenchmarkParseError(path, line_no, f"expected {len(header)} fields, got {len(fields)}")
            cid = fields[0].strip()
            try:
                epoch = int(fields[1])
                values = tuple(convert(float(v)) for v in fields[2:])
            except ValueError as exc:
                raise BenchmarkParseError(path, line_no, str(exc)) from None
            if epoch < 1:
                raise BenchmarkParseError(path, line_no, f"epoch must be >= 1, got {epoch}")
            per = rows.get(cid)
            if per is None:
                per = rows[cid] = {}
                order.append(cid)
            if epoch in per:
                raise BenchmarkParseError(path, line_no, f"duplicate epoch {epoch} for candidate {cid}")
            per[epoch] = values
        if not seen_header:
            raise EmptyBenchmarkError(f"{path}: no header row")

    report.n_candidates = len(order)
    if i_max is None:
        i_max = max((max(per) for per in rows.values()), default=0)
    curves = []
    for cid in order:
        per = rows[cid]
        if any(e not in per for e in range(1, i_max + 1)):
            report.dropped["incomplete"] += 1
            continue
        table = np.array([per[e] for e in range(1, i_max + 1)], dtype=float)
        if not np.all(np.isfinite(table)):
            report.dropped["non_finite"] += 1
            continue
        curves.append(LearningCurve(cid, table[:, 0], table[:, 1], table[:, 2]))
    if not curves:
        raise EmptyBenchmarkError(f"{path}: no valid learning curves ({report.n_candidates} read)")
    if report.dropped:
        logger.info("%s: dropped %d of %d candidates", path, sum(report.dropped.values()), report.n_candidates)

    return Benchmark(
        name=name or meta.get("name") or path.stem,
        task_kind=task_kind or meta.get("task_kind", "regression"),
        curves=tuple(curves),
        i_max=i_max,
        provenance=str(path),
    )


def canonical_export(benchmark: Benchmark, path) -> None:
    """Write ``benchmark`` in the canonical format; load_benchmark round-trips it exactly."""
    if not benchmark.curves:
        raise EmptyBenchmarkError("cannot export an empty benchmark")
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# name={benchmark.name}\n")
        fh.write(f"# task_kind={benchmark.task_kind}\n")
        fh.write(f"# source={benchmark.provenance}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for curve in benchmark.curves:
            for i in range(curve.epochs):
                writer.writerow((
                    curve.candidate_id,
                    i + 1,
                    repr(float(curve.train_error[i])),
                    repr(float(curve.valid_error[i])),
                    repr(float(curve.test_error[i])),
                ))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic curve generator.

    Each curve is an MMF4 mean pinned to a start error at epoch 1 and a final
    error at ``i_max``; ``b`` and ``d`` set the shape in between. A latent
    quality score orders the final errors. The epoch-1 errors follow a second
    latent correlated with it at ``rank_stability``. The worst
    ``fraction_diverging`` share of latent qualities end above 1 (worse than
    the constant predictor). Per-curve noise grows linearly from
    ``noise[0]`` for the best curve to ``noise[1]`` for the worst.
    """

    n_curves: int = 1000
    i_max: int = 100
    start_error: tuple[float, float] = (0.3, 1.0)
    final_error: tuple[float, float] = (0.02, 0.6)
    diverging_final_error: tuple[float, float] = (1.05, 2.0)
    b: tuple[float, float] = (1.0, 30.0)
    d: tuple[float, float] = (0.5, 2.0)
    # exponent on the quality quantile; > 1 crowds the best final errors together
    final_skew: float = 1.0
    noise: tuple[float, float] = (0.001, 0.03)
    train_gap: float = 0.1
    fraction_diverging: float = 0.0
    rank_stability: float = 0.9
    task_kind: str = "regression"
    name: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        for key in ("start_error", "final_error", "diverging_final_error", "b", "d", "noise"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        self.validate()

    def validate(self) -> None:
        if self.n_curves < 1:
            raise ValueError(f"n_curves must be >= 1, got {self.n_curves}")
        if self.i_max < 2:
            raise ValueError(f"i_max must be >= 2, got {self.i_max}")
        for key in ("start_error", "final_error", "diverging_final_error", "b", "d", "noise"):
            lo, hi = getattr(self, key)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"{key} must be a non-empty finite range, got {(lo, hi)}")
        if self.b[0] <= 0 or self.d[0] <= 0:
            raise ValueError("b and d ranges must be positive")
        if self.noise[0] < 0:
            raise ValueError("noise must be non-negative")
        if self.diverging_final_error[0] <= 1.0:
            raise ValueError("diverging_final_error must lie above 1.0")
        if not 0.0 <= self.fraction_diverging <= 1.0:
            raise ValueError("fraction_diverging must lie in [0, 1]")
        if not 0.0 <= self.rank_stability <= 1.0:
            raise ValueError("rank_stability must lie in [0, 1]")
        if self.final_skew <= 0:
            raise ValueError("final_skew must be positive")
        if not 0.0 <= self.train_gap < 1.0:
            raise ValueError("train_gap must lie in [0, 1)")
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _lerp(bounds: tuple[float, float], u):
    return bounds[0] + (bounds[1] - bounds[0]) * u


def _log_uniform(rng, bounds, size):
    return np.exp(rng.uniform(math.log(bounds[0]), math.log(bounds[1]), size))


def generate_synthetic(spec: SyntheticSpec) -> Benchmark:
    """Deterministic synthetic benchmark; identical specs give identical benchmarks."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_curves, spec.i_max

    z_final = rng.standard_normal(n)
    z_start = spec.rank_stability * z_final + math.sqrt(1.0 - spec.rank_stability**2) * rng.standard_normal(n)
    u_final = ndtr(z_final)
    u_start = ndtr(z_start)

    cut = 1.0 - spec.fraction_diverging
    diverging = u_final > cut
    final = np.empty(n)
    if cut > 0:
        final[~diverging] = _lerp(spec.final_error, (u_final[~diverging] / cut) ** spec.final_skew)
    final[diverging] = _lerp(spec.diverging_final_error, (u_final[diverging] - cut) / max(spec.fraction_diverging, 1e-300))
    start = _lerp(spec.start_error, u_start)

    b = _log_uniform(rng, spec.b, n)
    d = rng.uniform(spec.d[0], spec.d[1], n)
    # pin f(1) = start and f(T) = final: f = c + (a - c) * w(x), w(x) = b / (b + x**d)
    w1 = b / (b + 1.0)
    wT = b / (b + float(T) ** d)
    a = (start * (1.0 - wT) - final * (1.0 - w1)) / (w1 - wT)
    c = (final * w1 - start * wT) / (w1 - wT)

    epochs = np.arange(1, T + 1, dtype=float)
    mean = np.stack([mmf4_eval_array(a, b, c, d, x) for x in epochs], axis=1)
    # endpoints exactly as drawn, so rank orders at epoch 1 and T are exact
    mean[:, 0] = start
    mean[:, -1] = final
    scale = _lerp(spec.noise, u_final)[:, None]
    valid = mean + scale * rng.standard_normal((n, T))
    test = mean + scale * rng.standard_normal((n, T))
    train = mean * (1.0 - spec.train_gap) + scale * rng.standard_normal((n, T))

    width = len(str(n - 1))
    curves = tuple(
        LearningCurve(f"c{i:0{width}d}", train[i], valid[i], test[i]) for i in range(n)
    )
    return Benchmark(
        name=spec.name,
        task_kind=spec.task_kind,
        curves=curves,
        i_max=T,
        provenance=f"synthetic:{spec.digest()}",
    )

"""Replay of the random-search protocol with early discarding and Top-k completion.

One run draws a seeded stream of candidates from a benchmark, trains each one
epoch at a time until its policy says STOP or it reaches ``i_max``, and after
every candidate records the outcome the search would return if it ended
there: the Top-k candidates by observed validation error are trained to
completion (from scratch if they were stopped early) and the best of them by
validation error at ``i_max`` is reported with its test error.
"""

from __future__ import annotations

import logging
import warnings
from bisect import insort
from dataclasses import dataclass, field

import numpy as np

from .curves import Benchmark
from .lce import EngineConfig, LceEngine
from .policies import Kind, Policy, PolicySpec, make_policy

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    benchmark: Benchmark
    policy: PolicySpec
    seed: int = 0
    n_iterations: int = 200
    top_k: int = 3
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigurationError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if self.top_k < 1:
            raise ConfigurationError(f"top_k must be >= 1, got {self.top_k}")
        try:
            self.policy.validate_for(self.benchmark.i_max)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    @property
    def i_max(self) -> int:
        return self.benchmark.i_max


@dataclass(frozen=True)
class CandidateRecord:
    candidate_id: str
    position: int
    stop_epoch: int
    observed_valid_error: float

    @property
    def epochs_charged(self) -> int:
        return self.stop_epoch


@dataclass(frozen=True)
class AnytimeEntry:
    iteration: int
    cumulative_epochs: int
    final_valid_error: float
    final_test_error: float
    selected_id: str


@dataclass(frozen=True)
class SimulationTrace:
    config: RunConfig
    records: tuple[CandidateRecord, ...]
    anytime: tuple[AnytimeEntry, ...]

    @property
    def evaluation_epochs(self) -> int:
        return sum(r.stop_epoch for r in self.records)


def candidate_stream(benchmark: Benchmark, seed: int, n_iterations: int) -> list[int]:
    """Seeded permutation prefix of benchmark indices; identical for every policy."""
    n = len(benchmark)
    if n_iterations > n:
        warnings.warn(
            f"benchmark {benchmark.name!r} has {n} curves, fewer than {n_iterations} iterations; "
            "sampling without replacement until exhausted",
            stacklevel=2,
        )
    order = np.random.default_rng(seed).permutation(n)
    return [int(i) for i in order[: min(n_iterations, n)]]


def select_topk(records, top_k: int) -> list[CandidateRecord]:
    """Best ``top_k`` records by observed validation error; earlier stream position wins ties."""
    if not records:
        raise ValueError("need at least one record")
    return sorted(records, key=lambda r: (r.observed_valid_error, r.position))[:top_k]


def complete_and_score(selection, benchmark: Benchmark, i_max: int):
    """Train the selection to ``i_max`` and pick the winner.

    Returns ``(surcharge_epochs, final_valid_error, final_test_error, winner_id)``.
    Candidates stopped before ``i_max`` are charged a full ``i_max`` (retrained
    from scratch); the winner has the lowest validation error at ``i_max``.
    """
    if not selection:
        raise ValueError("empty selection")
    surcharge = sum(i_max for r in selection if r.stop_epoch < i_max)
    best = None
    for r in sorted(selection, key=lambda r: r.position):
        curve = benchmark.curve(r.candidate_id)
        valid = float(curve.valid_error[i_max - 1])
        if best is None or valid < best[0]:
            best = (valid, float(curve.test_error[i_max - 1]), r.candidate_id)
    return surcharge, best[0], best[1], best[2]


def _evaluate(policy: Policy, curve, i_max: int) -> int:
    valid = curve.valid_error
    for epoch in range(1, i_max + 1):
        if epoch == i_max:
            return epoch
        try:
            decision = policy.decide(curve.candidate_id, epoch, valid)
        except Exception as exc:  # noqa: BLE001 - policy failures are never fatal
            logger.warning("policy failed on %s at epoch %d: %s", curve.candidate_id, epoch, exc)
            continue
        if decision.stop:
            return epoch
    return i_max


def run(config: RunConfig, engine: LceEngine | None = None) -> SimulationTrace:
    """Replay one seeded search and return its full trace."""
    bench = config.benchmark
    i_max = bench.i_max
    if config.policy.kind is Kind.LCE and engine is None:
        engine = LceEngine(config.engine)
    policy = make_policy(
        config.policy, i_max, engine,
        check_every=config.engine.check_every,
        engine_seed=config.engine.seed,
        namespace=f"{bench.name}|{bench.provenance}",
    )

    curves = bench.curves
    records: list[CandidateRecord] = []
    anytime: list[AnytimeEntry] = []
    ranked: list[tuple[float, int, CandidateRecord]] = []
    spent = 0

    for position, index in enumerate(candidate_stream(bench, config.seed, config.n_iterations)):
        curve = curves[index]
        stop = _evaluate(policy, curve, i_max)
        if stop == i_max:
            policy.completed(float(curve.valid_error[i_max - 1]))
        record = CandidateRecord(curve.candidate_id, position, stop, float(curve.valid_error[stop - 1]))
        records.append(record)
        spent += stop

        insort(ranked, (record.observed_valid_error, position, record))
        del ranked[config.top_k:]
        selection = [item[2] for item in ranked]
        surcharge, final_valid, final_test, winner_id = complete_and_score(selection, bench, i_max)
        anytime.append(AnytimeEntry(
            iteration=position + 1,
            cumulative_epochs=spent + surcharge,
            final_valid_error=final_valid,
            final_test_error=final_test,
            selected_id=winner_id,
        ))

    return SimulationTrace(config=config, records=tuple(records), anytime=tuple(anytime))


def objective_point(trace: SimulationTrace) -> tuple[float, int]:
    """``(y_L, y_I)``: final test error and total epochs of the finished search."""
    last = trace.anytime[-1]
    return last.final_test_error, last.cumulative_epochs

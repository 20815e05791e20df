"""Replay simulator for early-discarding policies in neural-network hyperparameter optimization."""

from .curves import Benchmark, LearningCurve, SyntheticSpec, canonical_export, generate_synthetic, load_benchmark
from .policies import Kind, PolicySpec
from .simulator import RunConfig, SimulationTrace, objective_point, run

__all__ = [
    "Benchmark",
    "Kind",
    "LearningCurve",
    "PolicySpec",
    "RunConfig",
    "SimulationTrace",
    "SyntheticSpec",
    "canonical_export",
    "generate_synthetic",
    "load_benchmark",
    "objective_point",
    "run",
]

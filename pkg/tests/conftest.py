import numpy as np
import pytest

from earlydiscard.curves import Benchmark, LearningCurve, SyntheticSpec, generate_synthetic


def make_benchmark(valid, test=None, train=None, name="toy", task_kind="regression"):
    """Benchmark from (n_curves, i_max) arrays; test and train default to valid."""
    valid = np.asarray(valid, dtype=float)
    test = valid if test is None else np.asarray(test, dtype=float)
    train = valid if train is None else np.asarray(train, dtype=float)
    width = len(str(len(valid) - 1))
    curves = [
        LearningCurve(f"k{i:0{width}d}", train[i], valid[i], test[i]) for i in range(len(valid))
    ]
    return Benchmark(name=name, task_kind=task_kind, curves=tuple(curves), i_max=valid.shape[1])


@pytest.fixture(scope="session")
def small_bench():
    return generate_synthetic(SyntheticSpec(n_curves=240, i_max=100, seed=11, name="small"))


@pytest.fixture(scope="session")
def tiny_bench():
    # i_max 12 keeps LCE runs quick
    return generate_synthetic(SyntheticSpec(n_curves=60, i_max=12, seed=5, name="tiny"))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

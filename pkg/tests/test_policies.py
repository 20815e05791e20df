import itertools
import math

import numpy as np
import pytest

from earlydiscard.lce import EngineConfig, LceEngine, PosteriorSamples
from earlydiscard.policies import (
    LCE_SWEEP,
    SHA_SWEEP,
    Action,
    Kind,
    LcePolicy,
    PolicySpec,
    Reason,
    SharedHistory,
    iepoch_decide,
    lce_decide,
    make_policy,
    sha_decide,
    sha_rungs,
)


def sort_rank_oracle(past, current, r):
    """Survive iff the current score sorts into the top max(1, floor(m / r))."""
    # ties sort the current candidate first
    ordered = sorted([(s, 1) for s in past] + [(current, 0)])
    rank = ordered.index((current, 0)) + 1
    quota = max(1, int(len(ordered) // r))
    return rank <= quota


@pytest.mark.parametrize("i, epoch, stop", [(1, 1, True), (100, 99, False), (7, 7, True), (7, 6, False)])
def test_iepoch_boundaries(i, epoch, stop):
    d = iepoch_decide(epoch, PolicySpec(Kind.IEPOCH, i))
    assert d.stop is stop
    assert d.reason is Reason.EPOCH_LIMIT


def test_rungs_examples():
    assert sha_rungs(1, 100, 2) == [1, 2, 4, 8, 16, 32, 64]
    assert sha_rungs(1, 100, 64) == [1, 64]
    rungs = sha_rungs(1, 100, 1.41)
    assert rungs[0] == 1
    assert all(b > a for a, b in zip(rungs, rungs[1:]))
    assert all(b / a <= 2 for a, b in zip(rungs, rungs[1:]))
    with pytest.raises(ValueError):
        sha_rungs(1, 100, 1.0)
    with pytest.raises(ValueError):
        sha_rungs(5, 4, 2)


def test_rungs_match_enumeration():
    for r in SHA_SWEEP:
        expected = sorted({math.floor(r**k + 0.5) for k in range(40) if math.floor(r**k + 0.5) <= 100})
        assert sha_rungs(1, 100, r) == expected


def test_sha_examples():
    spec = PolicySpec(Kind.SHA, 2.0)
    assert sha_decide(1, 0.9, SharedHistory(), spec).action is Action.CONTINUE

    def history():
        h = SharedHistory()
        h.rung_scores[4].extend([0.10, 0.20, 0.30])
        return h

    h = history()
    assert sha_decide(4, 0.15, h, spec).action is Action.CONTINUE
    assert h.rung_scores[4] == [0.10, 0.20, 0.30, 0.15]
    h = history()
    assert sha_decide(4, 0.35, h, spec).action is Action.STOP
    # stopped candidates are recorded too
    assert h.rung_scores[4][-1] == 0.35


def test_sha_tie_continues():
    h = SharedHistory()
    h.rung_scores[1].extend([0.2, 0.2, 0.2])
    # m = 4, q = 2: a tie with the best scores still ranks first
    assert sha_decide(1, 0.2, h, PolicySpec(Kind.SHA, 2.0)).action is Action.CONTINUE


def test_sha_non_rung_epoch_continues():
    h = SharedHistory()
    d = sha_decide(3, 0.99, h, PolicySpec(Kind.SHA, 2.0), rungs=frozenset({1, 2, 4}))
    assert d.reason is Reason.NOT_A_RUNG and not d.stop
    assert not h.rung_scores


def test_sha_matches_oracle_exhaustively_on_small_grids():
    # every history over a 3-value alphabet up to length 6, every current value
    values = (0.1, 0.2, 0.3)
    for r in SHA_SWEEP:
        spec = PolicySpec(Kind.SHA, r)
        for m in range(0, 7):
            for past in itertools.product(values, repeat=m):
                for current in (0.05, 0.1, 0.15, 0.2, 0.3, 0.4):
                    h = SharedHistory()
                    h.rung_scores[1].extend(past)
                    got = sha_decide(1, current, h, spec).action is Action.CONTINUE
                    assert got == sort_rank_oracle(past, current, r)


def test_sha_matches_oracle_on_random_histories():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        r = float(rng.choice(SHA_SWEEP))
        past = list(np.round(rng.random(int(rng.integers(0, 20))), 2))
        current = float(np.round(rng.random(), 2))
        h = SharedHistory()
        h.rung_scores[8].extend(past)
        got = sha_decide(8, current, h, PolicySpec(Kind.SHA, r)).action is Action.CONTINUE
        assert got == sort_rank_oracle(past, current, r)


class StubEngine:
    """Returns a fixed sample set: ``p_worse`` of the draws sit above 0.5."""

    def __init__(self, p_worse=0.9, n=200, fail=False):
        k = int(round(p_worse * n))
        v = np.array([0.9] * k + [0.1] * (n - k))
        self.samples = PosteriorSamples(
            np.column_stack([v, np.ones(n), v, np.ones(n), np.full(n, 0.05)]), 0.3, 0)
        self.fail = fail
        self.calls = 0

    def posterior(self, epochs, values, seed, key=None):
        self.calls += 1
        if self.fail:
            raise RuntimeError("boom")
        return self.samples


def _history(best=0.5):
    h = SharedHistory()
    h.record_completion(best)
    return h


def test_lce_threshold():
    x = np.arange(1, 6.0)
    y = np.linspace(0.9, 0.7, 5)
    engine = StubEngine(0.9)
    d = lce_decide(x, y, _history(), PolicySpec(Kind.LCE, 0.5), engine, 0, 100)
    assert d.stop and d.reason is Reason.HORIZON_PROBABILITY
    d = lce_decide(x, y, _history(), PolicySpec(Kind.LCE, 0.95), engine, 0, 100)
    assert not d.stop and d.reason is Reason.HORIZON_PROBABILITY


def test_lce_insufficient_data():
    engine = StubEngine(1.0)
    d = lce_decide([1, 2, 3], [0.9, 0.8, 0.7], _history(), PolicySpec(Kind.LCE, 0.5), engine, 0, 100)
    assert d.reason is Reason.INSUFFICIENT_DATA and not d.stop
    d = lce_decide(np.arange(1, 9.0), np.full(8, 0.9), SharedHistory(), PolicySpec(Kind.LCE, 0.5), engine, 0, 100)
    assert d.reason is Reason.INSUFFICIENT_DATA and not d.stop
    assert engine.calls == 0


def test_lce_engine_failure_continues(caplog):
    d = lce_decide(np.arange(1, 9.0), np.full(8, 0.9), _history(), PolicySpec(Kind.LCE, 0.5),
                   StubEngine(fail=True), 0, 100)
    assert d.reason is Reason.ENGINE_FAILURE and not d.stop
    assert "extrapolation failed" in caplog.text


def test_lce_first_candidate_runs_to_completion():
    policy = make_policy(PolicySpec(Kind.LCE, 0.5), 20, StubEngine(1.0))
    prefix = np.linspace(0.9, 0.5, 20)
    assert all(not policy.decide("c0", e, prefix).stop for e in range(1, 20))


def test_sha_first_candidate_runs_to_completion():
    policy = make_policy(PolicySpec(Kind.SHA, 64.0), 100)
    prefix = np.full(100, 5.0)
    assert all(not policy.decide("c0", e, prefix).stop for e in range(1, 100))


def _stop_epoch(policy, cid, prefix, i_max):
    for e in range(1, i_max):
        if policy.decide(cid, e, prefix).stop:
            return e
    return i_max


def test_lce_stop_epoch_monotone_in_rho(tiny_bench):
    engine = LceEngine(EngineConfig())
    i_max = tiny_bench.i_max
    for curve in tiny_bench.curves[:15]:
        stops = []
        for rho in LCE_SWEEP:
            policy = LcePolicy(PolicySpec(Kind.LCE, rho), i_max, engine, namespace="tiny")
            policy.completed(0.3)
            stops.append(_stop_epoch(policy, curve.candidate_id, curve.valid_error, i_max))
        assert stops == sorted(stops)


def test_lce_check_cadence():
    engine = StubEngine(0.0)
    policy = LcePolicy(PolicySpec(Kind.LCE, 0.5), 30, engine, check_every=5)
    policy.completed(0.5)
    prefix = np.full(30, 0.9)
    for e in range(1, 30):
        policy.decide("c", e, prefix)
    # checks at epochs 4, 9, 14, 19, 24, 29
    assert engine.calls == 6


@pytest.mark.parametrize("text, kind, value", [("sha=2", Kind.SHA, 2.0), ("lce:0.9", Kind.LCE, 0.9),
                                               ("iepoch=3", Kind.IEPOCH, 3)])
def test_spec_parse(text, kind, value):
    spec = PolicySpec.parse(text)
    assert (spec.kind, spec.value) == (kind, value)


@pytest.mark.parametrize("kind, value", [(Kind.IEPOCH, 0), (Kind.IEPOCH, 1.5), (Kind.SHA, 1.0),
                                         (Kind.LCE, 1.0), (Kind.LCE, 0.0)])
def test_spec_ranges(kind, value):
    with pytest.raises(ValueError):
        PolicySpec(kind, value)


def test_spec_validate_for_i_max():
    with pytest.raises(ValueError):
        PolicySpec(Kind.IEPOCH, 101).validate_for(100)
    with pytest.raises(ValueError):
        make_policy(PolicySpec(Kind.LCE, 0.5), 100)

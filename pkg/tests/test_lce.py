import math

import numpy as np
import pytest

from earlydiscard.curves import SyntheticSpec, generate_synthetic
from earlydiscard.lce import (
    EngineConfig,
    EngineError,
    FitConfig,
    FitResult,
    LceEngine,
    McmcConfig,
    Mmf4Params,
    PosteriorSamples,
    derive_seed,
    fit_lm,
    mmf4_eval,
    prob_worse_at_horizon,
    sample_posterior,
)


def curve(p, x):
    return np.array([mmf4_eval(p, e) for e in x])


def direct_mmf4(a, b, c, d, x):
    return (a * b + c * x**d) / (b + x**d)


def test_mmf4_examples():
    assert mmf4_eval(Mmf4Params(0.4, 3.0, 0.4, 2.0), 17) == pytest.approx(0.4, abs=1e-15)
    assert mmf4_eval(Mmf4Params(1.0, 8.0, 0.0, 3.0), 2) == pytest.approx(0.5, abs=1e-15)
    assert mmf4_eval(Mmf4Params(1.0, 1.0, 0.1, 1.0), 1e300) == pytest.approx(0.1, abs=1e-12)
    assert mmf4_eval(Mmf4Params(1.0, 1.0, 0.1, 5.0), 1e200) == pytest.approx(0.1, abs=1e-12)


def test_mmf4_matches_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(500):
        a, c = rng.uniform(-1, 2, 2)
        b = math.exp(rng.uniform(-3, 5))
        d = rng.uniform(0.1, 4)
        x = rng.uniform(1, 100)
        assert mmf4_eval(Mmf4Params(a, b, c, d), x) == pytest.approx(direct_mmf4(a, b, c, d, x), rel=1e-10, abs=1e-12)


def test_mmf4_monotone_in_epoch():
    rng = np.random.default_rng(1)
    x = np.linspace(1, 200, 2000)
    for _ in range(200):
        a, c = rng.uniform(0, 1, 2)
        p = Mmf4Params(a, math.exp(rng.uniform(-2, 4)), c, rng.uniform(0.2, 3))
        steps = np.diff(curve(p, x))
        if a > c:
            assert np.all(steps <= 0)
        else:
            assert np.all(steps >= 0)


def test_params_validated():
    with pytest.raises(ValueError):
        Mmf4Params(1, 0.0, 0, 1)
    with pytest.raises(ValueError):
        Mmf4Params(float("nan"), 1, 0, 1)


def test_fit_recovers_extrapolation():
    truth = Mmf4Params(0.9, 5.0, 0.1, 1.5)
    x = np.arange(1, 21, dtype=float)
    fit = fit_lm(x, curve(truth, x))
    assert fit.converged
    assert abs(mmf4_eval(fit.params, 100) - mmf4_eval(truth, 100)) < 1e-3


def test_fit_needs_four_points():
    with pytest.raises(ValueError):
        fit_lm([1, 2, 3], [0.5, 0.4, 0.3])


def test_constant_prefix():
    fit = fit_lm(np.arange(1, 11), np.full(10, 0.5))
    assert fit.sse == pytest.approx(0.0, abs=1e-20)
    assert mmf4_eval(fit.params, 100) == pytest.approx(0.5, abs=1e-9)


def test_sse_never_increases_per_start():
    bench = generate_synthetic(SyntheticSpec(n_curves=60, i_max=30, seed=3))
    for c in bench.curves:
        fit = fit_lm(np.arange(1, 31), c.valid_error)
        assert len(fit.start_sse) == 9 or fit.sse == 0.0
        for sse0, sse in fit.start_sse:
            assert sse <= sse0 or not math.isfinite(sse0)
        # best result is no worse than the heuristic start
        assert fit.sse <= fit.start_sse[0][0]


def test_fit_never_raises_on_hostile_input():
    x = np.arange(1, 9, dtype=float)
    fit = fit_lm(x, np.array([1e8, -1e8, 1e8, -1e8, 1e8, -1e8, 1e8, -1e8]))
    assert isinstance(fit, FitResult)
    assert math.isfinite(fit.sse)


def _prefix(seed, n=30, noise=0.01):
    truth = Mmf4Params(0.9, 5.0, 0.2, 1.2)
    x = np.arange(1, n + 1, dtype=float)
    y = curve(truth, x) + noise * np.random.default_rng(seed).standard_normal(n)
    return x, y


def test_posterior_is_deterministic():
    x, y = _prefix(0)
    fit = fit_lm(x, y)
    a = sample_posterior(x, y, fit, seed=7)
    b = sample_posterior(x, y, fit, seed=7)
    assert np.array_equal(a.draws, b.draws)
    assert a.acceptance_rate == b.acceptance_rate
    assert a.draws.shape == (200, 5)
    assert np.all(a.draws[:, 4] > 0) and np.all(a.draws[:, 1] > 0)
    assert not np.array_equal(a.draws, sample_posterior(x, y, fit, seed=8).draws)


def test_posterior_agrees_with_fit():
    x, y = _prefix(1, noise=0.002)
    fit = fit_lm(x, y)
    post = sample_posterior(x, y, fit, seed=3)
    ext = post.extrapolate(100)
    assert abs(ext.mean() - mmf4_eval(fit.params, 100)) <= 3 * ext.std()


def test_acceptance_rate_band():
    bench = generate_synthetic(SyntheticSpec(n_curves=100, i_max=40, seed=12))
    rng = np.random.default_rng(0)
    rates = []
    for k, c in enumerate(bench.curves):
        n = int(rng.integers(4, 41))
        x = np.arange(1, n + 1, dtype=float)
        y = c.valid_error[:n]
        rates.append(sample_posterior(x, y, fit_lm(x, y), seed=k).acceptance_rate)
    rates = np.array(rates)
    assert np.mean((rates >= 0.1) & (rates <= 0.6)) >= 0.9


def test_posterior_concentrates_as_noise_shrinks():
    spreads = []
    for noise in (0.05, 0.01, 0.002):
        x, y = _prefix(2, n=30, noise=noise)
        post = sample_posterior(x, y, fit_lm(x, y), seed=1)
        spreads.append(post.extrapolate(100).std())
    assert spreads[0] > spreads[1] > spreads[2]


def test_nonfinite_start_raises():
    x = np.arange(1, 6, dtype=float)
    y = np.full(5, 1e200)
    # residuals of 1e200 overflow the likelihood
    fit = FitResult(Mmf4Params(0.0, 1.0, 0.0, 1.0), math.inf, True, 0)
    with pytest.raises(EngineError):
        sample_posterior(x, y, fit, seed=0)


def _samples(values):
    # a = c = value gives a flat curve at exactly that value
    v = np.asarray(values, dtype=float)
    draws = np.column_stack([v, np.ones_like(v), v, np.ones_like(v), np.full_like(v, 0.1)])
    return PosteriorSamples(draws, 0.3, 0)


def test_prob_worse_examples():
    assert prob_worse_at_horizon(_samples([0.9] * 200), 0.5, 100) == 1.0
    assert prob_worse_at_horizon(_samples([0.1] * 200), 0.5, 100) == 0.0
    assert prob_worse_at_horizon(_samples([0.9] * 100 + [0.1] * 100), 0.5, 100) == 0.5
    # strictly greater counts as worse
    assert prob_worse_at_horizon(_samples([0.5] * 10), 0.5, 100) == 0.0


def test_prob_worse_monotone_in_incumbent():
    x, y = _prefix(4)
    post = sample_posterior(x, y, fit_lm(x, y), seed=0)
    probs = [prob_worse_at_horizon(post, inc, 100) for inc in np.linspace(0, 1, 101)]
    assert all(p >= q for p, q in zip(probs, probs[1:]))


def test_engine_cache_and_seed_derivation():
    x, y = _prefix(5, n=10)
    engine = LceEngine(EngineConfig())
    a = engine.posterior(x, y, seed=1, key=("b", "c1", 10))
    b = engine.posterior(x, y, seed=99, key=("b", "c1", 10))
    assert a is b and engine.n_computed == 1
    uncached = LceEngine(EngineConfig(cache=False))
    uncached.posterior(x, y, seed=1, key=("b", "c1", 10))
    uncached.posterior(x, y, seed=1, key=("b", "c1", 10))
    assert uncached.n_computed == 2
    assert derive_seed(0, "c1", 5) == derive_seed(0, "c1", 5) != derive_seed(0, "c1", 6)


def test_config_round_trip_and_validation():
    cfg = EngineConfig.from_dict({"fit": {"n_restarts": 2}, "mcmc": {"n_steps": 2000}, "check_every": 3})
    assert EngineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        McmcConfig(n_steps=1100, burn_in=1000, thin=10)
    assert FitConfig().n_restarts == 8

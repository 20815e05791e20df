"""MMF4 learning-curve model, damped least-squares fitting and posterior sampling.

The curve family is ``f(x) = (a*b + c*x**d) / (b + x**d)``. It is evaluated as
``c + (a - c) * sigmoid(log(b) - d*log(x))`` which never overflows: for huge
``x**d`` it returns ``c`` and for tiny ``x**d`` it returns ``a``.

Fitting is Levenberg-Marquardt over ``(a, log b, c, d)`` with a heuristic
start plus random restarts. Sampling is a component-wise random-walk
Metropolis chain over ``(a, b, c, d, noise)`` whose prior is centred on the
least-squares fit. Both inner loops are numba kernels; the LCE policy calls
them once per (candidate, epoch).
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

MIN_PREFIX = 4


class EngineError(RuntimeError):
    """Raised when the posterior cannot be initialised."""


@dataclass(frozen=True)
class Mmf4Params:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c, self.d)):
            raise ValueError(f"non-finite MMF4 parameters: {self}")
        if self.b <= 0:
            raise ValueError(f"MMF4 requires b > 0, got {self.b}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d])


@dataclass(frozen=True)
class FitConfig:
    n_restarts: int = 8
    max_iter: int = 200
    gtol: float = 1e-12
    xtol: float = 1e-12
    ftol: float = 1e-14
    seed: int = 0


@dataclass(frozen=True)
class McmcConfig:
    n_steps: int = 3000
    burn_in: int = 1000
    thin: int = 10
    target_acceptance: float = 0.25
    adapt_window: int = 50
    # lower bound on the noise scale; keeps the posterior proper on exact fits
    min_noise: float = 1e-4

    def __post_init__(self):
        n_draws = (self.n_steps - self.burn_in) // self.thin
        if n_draws < 100:
            raise ValueError(f"MCMC settings yield {n_draws} draws, need at least 100")


@dataclass(frozen=True)
class EngineConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    check_every: int = 1
    cache: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict | None) -> "EngineConfig":
        data = dict(data or {})
        fit = FitConfig(**data.pop("fit", {}))
        mcmc = McmcConfig(**data.pop("mcmc", {}))
        return cls(fit=fit, mcmc=mcmc, **data)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass(frozen=True)
class FitResult:
    params: Mmf4Params
    sse: float
    converged: bool
    restarts_used: int
    # (initial sse, final sse) for every start that was run
    start_sse: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Thinned chain draws; columns are a, b, c, d, noise."""

    draws: np.ndarray
    acceptance_rate: float
    seed: int

    def extrapolate(self, epoch: float) -> np.ndarray:
        d = self.draws
        return mmf4_eval_array(d[:, 0], d[:, 1], d[:, 2], d[:, 3], float(epoch))


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _mmf4(a, b, c, d, x):
    t = d * math.log(x) - math.log(b)
    # w = b / (b + x**d) = sigmoid(-t)
    if t >= 0.0:
        e = math.exp(-t)
        w = e / (1.0 + e)
    else:
        w = 1.0 / (1.0 + math.exp(t))
    return c + (a - c) * w


@njit(cache=True)
def _residuals_jacobian(theta, x, y, r, jac):
    a = theta[0]
    b = math.exp(theta[1])
    c = theta[2]
    d = theta[3]
    sse = 0.0
    for j in range(x.shape[0]):
        lx = math.log(x[j])
        t = d * lx - theta[1]
        if t >= 0.0:
            e = math.exp(-t)
            w = e / (1.0 + e)
        else:
            w = 1.0 / (1.0 + math.exp(t))
        f = c + (a - c) * w
        r[j] = f - y[j]
        sse += r[j] * r[j]
        dw = (a - c) * w * (1.0 - w)
        jac[j, 0] = w
        jac[j, 1] = dw
        jac[j, 2] = 1.0 - w
        jac[j, 3] = -dw * lx
    return sse


@njit(cache=True)
def _sse_only(theta, x, y):
    a = theta[0]
    c = theta[2]
    d = theta[3]
    sse = 0.0
    for j in range(x.shape[0]):
        t = d * math.log(x[j]) - theta[1]
        if t >= 0.0:
            e = math.exp(-t)
            w = e / (1.0 + e)
        else:
            w = 1.0 / (1.0 + math.exp(t))
        res = c + (a - c) * w - y[j]
        sse += res * res
    return sse


@njit(cache=True)
def _solve4(m, rhs, out):
    # Gaussian elimination with partial pivoting; returns False if singular.
    n = rhs.shape[0]
    a = m.copy()
    v = rhs.copy()
    for col in range(n):
        piv = col
        best = abs(a[col, col])
        for row in range(col + 1, n):
            if abs(a[row, col]) > best:
                best = abs(a[row, col])
                piv = row
        if best == 0.0 or not math.isfinite(best):
            return False
        if piv != col:
            for k in range(n):
                tmp = a[col, k]
                a[col, k] = a[piv, k]
                a[piv, k] = tmp
            tmp = v[col]
            v[col] = v[piv]
            v[piv] = tmp
        for row in range(col + 1, n):
            fac = a[row, col] / a[col, col]
            for k in range(col, n):
                a[row, k] -= fac * a[col, k]
            v[row] -= fac * v[col]
    for row in range(n - 1, -1, -1):
        s = v[row]
        for k in range(row + 1, n):
            s -= a[row, k] * out[k]
        out[row] = s / a[row, row]
    return True


@njit(cache=True)
def _lm_kernel(x, y, theta0, max_iter, gtol, xtol, ftol):
    n = x.shape[0]
    theta = theta0.copy()
    r = np.empty(n)
    jac = np.empty((n, 4))
    sse = _residuals_jacobian(theta, x, y, r, jac)
    sse0 = sse
    if not math.isfinite(sse):
        return theta, sse0, sse, False
    lam = 1e-3
    converged = False
    new_sse = sse
    delta = np.zeros(4)
    trial = np.empty(4)
    m = np.empty((4, 4))
    for _ in range(max_iter):
        g = jac.T @ r
        gmax = 0.0
        for k in range(4):
            if abs(g[k]) > gmax:
                gmax = abs(g[k])
        if gmax <= gtol:
            converged = True
            break
        jtj = jac.T @ jac
        accepted = False
        while lam < 1e16:
            for i in range(4):
                for k in range(4):
                    m[i, k] = jtj[i, k]
                m[i, i] += lam * (jtj[i, i] + 1e-12)
            if _solve4(m, -g, delta):
                for k in range(4):
                    trial[k] = theta[k] + delta[k]
                new_sse = _sse_only(trial, x, y)
                if math.isfinite(new_sse) and new_sse < sse:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        step = 0.0
        scale = 0.0
        for k in range(4):
            step += delta[k] * delta[k]
            scale += theta[k] * theta[k]
        reduction = sse - new_sse
        theta[:] = trial
        sse = _residuals_jacobian(theta, x, y, r, jac)
        lam = max(lam * 0.1, 1e-12)
        if math.sqrt(step) <= xtol * (math.sqrt(scale) + xtol):
            converged = True
            break
        if reduction <= ftol * max(sse, 1e-300):
            converged = True
            break
        if sse == 0.0:
            converged = True
            break
    return theta, sse0, sse, converged


@njit(cache=True)
def _log_posterior(p, x, y, center, min_noise):
    b = p[1]
    s = p[4]
    if b <= 0.0 or s < min_noise:
        return -np.inf
    sse = 0.0
    for j in range(x.shape[0]):
        res = _mmf4(p[0], b, p[2], p[3], x[j]) - y[j]
        sse += res * res
    n = x.shape[0]
    loglik = -n * math.log(s) - 0.5 * sse / (s * s)
    logprior = -s
    for k in range(4):
        dk = p[k] - center[k]
        logprior -= 0.5 * dk * dk
    return loglik + logprior


@njit(cache=True)
def _metropolis_kernel(x, y, start, center, scales, normals, log_uniforms,
                       burn_in, thin, target, window, min_noise):
    n_steps = normals.shape[0]
    dim = start.shape[0]
    cur = start.copy()
    cur_lp = _log_posterior(cur, x, y, center, min_noise)
    n_draws = (n_steps - burn_in) // thin
    draws = np.empty((n_draws, dim))
    scales = scales.copy()
    win_acc = np.zeros(dim)
    n_acc = 0
    n_prop = 0
    i_draw = 0
    for step in range(n_steps):
        for k in range(dim):
            old = cur[k]
            cur[k] = old + scales[k] * normals[step, k]
            lp = _log_posterior(cur, x, y, center, min_noise)
            if log_uniforms[step, k] < lp - cur_lp:
                cur_lp = lp
                win_acc[k] += 1.0
                if step >= burn_in:
                    n_acc += 1
            else:
                cur[k] = old
            if step >= burn_in:
                n_prop += 1
        if step < burn_in and (step + 1) % window == 0:
            for k in range(dim):
                rate = win_acc[k] / window
                scales[k] *= math.exp(2.0 * (rate - target))
                win_acc[k] = 0.0
        if step >= burn_in and (step - burn_in + 1) % thin == 0 and i_draw < n_draws:
            draws[i_draw, :] = cur
            i_draw += 1
    return draws, n_acc / max(n_prop, 1)


@njit(cache=True)
def _mmf4_vec(a, b, c, d, x):
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        if b[i] > 0.0:
            out[i] = _mmf4(a[i], b[i], c[i], d[i], x)
        else:
            out[i] = np.nan
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def mmf4_eval(params: Mmf4Params, epoch: float) -> float:
    """Value of the MMF4 curve at ``epoch`` (> 0)."""
    if epoch <= 0:
        raise ValueError(f"epoch must be positive, got {epoch}")
    return float(_mmf4(params.a, params.b, params.c, params.d, float(epoch)))


def mmf4_eval_array(a, b, c, d, epoch: float) -> np.ndarray:
    """Vectorised MMF4 over parameter arrays at a single epoch."""
    return _mmf4_vec(
        np.ascontiguousarray(a, dtype=float),
        np.ascontiguousarray(b, dtype=float),
        np.ascontiguousarray(c, dtype=float),
        np.ascontiguousarray(d, dtype=float),
        float(epoch),
    )


def _as_prefix(epochs, values) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(epochs, dtype=float)
    y = np.ascontiguousarray(values, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("prefix epochs and values must be 1-D and of equal length")
    if x.shape[0] < MIN_PREFIX:
        raise ValueError(f"need at least {MIN_PREFIX} observations to fit MMF4, got {x.shape[0]}")
    if np.any(x <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("prefix epochs must be positive and values finite")
    return x, y


def heuristic_init(values) -> Mmf4Params:
    """Start at a = first value, c = last value, b = 1, d = 1."""
    return Mmf4Params(a=float(values[0]), b=1.0, c=float(values[-1]), d=1.0)


def fit_lm(epochs, values, config: FitConfig | None = None) -> FitResult:
    """Least-squares MMF4 fit of an observed curve prefix.

    Runs Levenberg-Marquardt from the heuristic start and ``config.n_restarts``
    randomised starts and keeps the lowest SSE. Never raises on divergence; a
    result with ``converged=False`` means no start met a tolerance.
    """
    config = config or FitConfig()
    x, y = _as_prefix(epochs, values)
    init = heuristic_init(y)
    rng = np.random.default_rng(config.seed)
    starts = [np.array([init.a, 0.0, init.c, init.d])]
    for _ in range(config.n_restarts):
        b = math.exp(rng.uniform(math.log(0.1), math.log(100.0)))
        d = math.exp(rng.uniform(math.log(0.25), math.log(4.0)))
        a = init.a * (1.0 + rng.uniform(-0.2, 0.2))
        c = init.c * (1.0 + rng.uniform(-0.2, 0.2))
        starts.append(np.array([a, math.log(b), c, d]))

    best = None
    start_sse = []
    for n_used, theta0 in enumerate(starts):
        theta, sse0, sse, converged = _lm_kernel(
            x, y, theta0, config.max_iter, config.gtol, config.xtol, config.ftol
        )
        start_sse.append((float(sse0), float(sse)))
        # b = exp(theta[1]) must stay representable and positive
        if not (math.isfinite(sse) and np.all(np.isfinite(theta)) and abs(theta[1]) < 700.0):
            continue
        # lowest SSE wins, so the result never exceeds the heuristic start's SSE
        key = (sse, not converged)
        if best is None or key < best[0]:
            best = (key, theta, sse, converged)
        if converged and sse == 0.0:
            break

    restarts_used = len(start_sse) - 1
    if best is None:
        logger.debug("all %d LM starts diverged", len(start_sse))
        sse = float(_sse_only(starts[0], x, y))
        return FitResult(init, sse, False, restarts_used, tuple(start_sse))
    _, theta, sse, converged = best
    params = Mmf4Params(float(theta[0]), float(math.exp(theta[1])), float(theta[2]), float(theta[3]))
    return FitResult(params, float(sse), bool(converged), restarts_used, tuple(start_sse))


def _initial_scales(x, params: Mmf4Params, noise: float) -> np.ndarray:
    # conditional posterior std per coordinate from a Laplace approximation
    theta = np.array([params.a, math.log(params.b), params.c, params.d])
    r = np.empty(x.shape[0])
    jac = np.empty((x.shape[0], 4))
    _residuals_jacobian(theta, x, np.zeros_like(x), r, jac)
    jac[:, 1] /= params.b  # d/d(log b) -> d/db
    precision = np.einsum("ij,ij->j", jac, jac) / noise**2 + 1.0
    scales = np.empty(5)
    scales[:4] = 2.4 / np.sqrt(precision)
    scales[4] = 2.4 * noise / math.sqrt(2.0 * x.shape[0])
    return scales


def sample_posterior(
    epochs,
    values,
    lm_fit: FitResult,
    config: McmcConfig | None = None,
    seed: int = 0,
) -> PosteriorSamples:
    """Random-walk Metropolis draws of MMF4 parameters and noise scale.

    Log-posterior: Gaussian likelihood of the prefix residuals, unit-variance
    Gaussian prior on a, b, c, d centred on the fit, Exponential(1) prior on
    the noise scale. A non-converged fit is replaced by the heuristic start as
    prior centre.
    """
    config = config or McmcConfig()
    x, y = _as_prefix(epochs, values)
    center_params = lm_fit.params if lm_fit.converged else heuristic_init(y)
    center = center_params.as_array()
    sse = float(_sse_only(np.array([center[0], math.log(center[1]), center[2], center[3]]), x, y))
    noise0 = max(math.sqrt(sse / x.shape[0]), config.min_noise)
    start = np.append(center, noise0)
    if not math.isfinite(_log_posterior(start, x, y, center, config.min_noise)):
        raise EngineError(f"non-finite log-posterior at the fitted start {start}")

    rng = np.random.default_rng(seed)
    normals = rng.standard_normal((config.n_steps, 5))
    log_uniforms = np.log(rng.random((config.n_steps, 5)))
    scales = _initial_scales(x, center_params, noise0)
    draws, acc = _metropolis_kernel(
        x, y, start, center, scales, normals, log_uniforms,
        config.burn_in, config.thin, config.target_acceptance,
        config.adapt_window, config.min_noise,
    )
    return PosteriorSamples(draws=draws, acceptance_rate=float(acc), seed=int(seed))


def prob_worse_at_horizon(
    samples: PosteriorSamples, incumbent_final_error: float, horizon: int
) -> float:
    """Share of draws whose noise-free value at ``horizon`` exceeds the incumbent."""
    values = samples.extrapolate(horizon)
    if values.size == 0:
        raise ValueError("no posterior draws")
    return float(np.count_nonzero(values > incumbent_final_error) / values.size)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


class LceEngine:
    """Fit-then-sample extrapolator with an optional per-(candidate, epoch) cache.

    Any object with the same ``posterior`` signature can be handed to the LCE
    policy, e.g. an extrapolator backed by a pre-trained network.
    """

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self._cache: dict = {}
        self.n_computed = 0

    def posterior(self, epochs, values, seed: int, key=None) -> PosteriorSamples:
        if self.config.cache and key is not None:
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        fit = fit_lm(epochs, values, self.config.fit)
        samples = sample_posterior(epochs, values, fit, self.config.mcmc, seed)
        self.n_computed += 1
        if self.config.cache and key is not None:
            self._cache[key] = samples
        return samples

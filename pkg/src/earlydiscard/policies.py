"""Vertical early-discarding policies: i-Epoch, r-SHA and rho-LCE.

A policy sees one candidate at a time and, after each training epoch, answers
CONTINUE or STOP. The only state shared between candidates is
``SharedHistory``, owned by a single simulation run.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .lce import MIN_PREFIX, PosteriorSamples, derive_seed, prob_worse_at_horizon

logger = logging.getLogger(__name__)

# aggressiveness sweeps used for the multi-objective profiles
IEPOCH_SWEEP = tuple(range(1, 101))
LCE_SWEEP = (0.5, 0.7, 0.8, 0.9, 0.95)
SHA_SWEEP = (1.19, 1.41, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


class Kind(str, enum.Enum):
    IEPOCH = "iepoch"
    SHA = "sha"
    LCE = "lce"


class Action(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


class Reason(str, enum.Enum):
    RUNG_RANK = "rung-rank"
    NOT_A_RUNG = "not-a-rung"
    HORIZON_PROBABILITY = "horizon-probability"
    EPOCH_LIMIT = "epoch-limit"
    INSUFFICIENT_DATA = "insufficient-data"
    ENGINE_FAILURE = "engine-failure"


@dataclass(frozen=True)
class Decision:
    action: Action
    reason: Reason

    @property
    def stop(self) -> bool:
        return self.action is Action.STOP


@dataclass(frozen=True)
class PolicySpec:
    kind: Kind
    value: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.IEPOCH:
            if float(self.value) != int(self.value) or int(self.value) < 1:
                raise ValueError(f"i-Epoch needs an integer i >= 1, got {self.value}")
            object.__setattr__(self, "value", int(self.value))
        elif self.kind is Kind.SHA:
            if not (math.isfinite(self.value) and self.value > 1):
                raise ValueError(f"SHA reduction factor must be > 1, got {self.value}")
            object.__setattr__(self, "value", float(self.value))
        else:
            if not 0.0 < self.value < 1.0:
                raise ValueError(f"LCE confidence must lie in (0, 1), got {self.value}")
            object.__setattr__(self, "value", float(self.value))

    def validate_for(self, i_max: int) -> None:
        if self.kind is Kind.IEPOCH and self.value > i_max:
            raise ValueError(f"i-Epoch i={self.value} exceeds i_max={i_max}")

    @property
    def label(self) -> str:
        """Parameter rendered for file names and tables."""
        return str(self.value) if self.kind is Kind.IEPOCH else repr(float(self.value))

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        """Parse ``kind=value`` or ``kind:value`` (e.g. ``sha=2.0``)."""
        for sep in ("=", ":"):
            if sep in text:
                kind, _, value = text.partition(sep)
                return cls(Kind(kind.strip().lower()), float(value))
        raise ValueError(f"cannot parse policy {text!r}; expected kind=value")


@dataclass
class SharedHistory:
    rung_scores: dict[int, list[float]] = field(default_factory=lambda: defaultdict(list))
    best_final_error: float | None = None

    def record_completion(self, final_valid_error: float) -> None:
        if self.best_final_error is None or final_valid_error < self.best_final_error:
            self.best_final_error = final_valid_error


# ---------------------------------------------------------------------------
# i-Epoch
# ---------------------------------------------------------------------------


def iepoch_decide(current_epoch: int, spec: PolicySpec) -> Decision:
    """CONTINUE while fewer than ``i`` epochs have been trained."""
    if current_epoch < spec.value:
        return Decision(Action.CONTINUE, Reason.EPOCH_LIMIT)
    return Decision(Action.STOP, Reason.EPOCH_LIMIT)


# ---------------------------------------------------------------------------
# successive halving
# ---------------------------------------------------------------------------


def sha_rungs(i_min: int, i_max: int, r: float) -> list[int]:
    """Rounded geometric schedule ``i_min * r**k`` up to ``i_max``, deduplicated."""
    if not r > 1 or i_min < 1 or i_max < i_min:
        raise ValueError(f"invalid rung parameters i_min={i_min}, i_max={i_max}, r={r}")
    rungs: list[int] = []
    k = 0
    while True:
        value = math.floor(i_min * r**k + 0.5)
        if value > i_max:
            break
        if not rungs or value > rungs[-1]:
            rungs.append(value)
        k += 1
    return rungs


def sha_decide(
    current_epoch: int,
    current_valid_error: float,
    history: SharedHistory,
    spec: PolicySpec,
    rungs=None,
) -> Decision:
    """Survive a rung iff ranked within the top ``max(1, floor(m / r))`` scores seen there.

    ``m`` counts past scores at this rung plus the current one; ties rank in
    favour of the current candidate. The current score is recorded either way.
    ``rungs`` restricts decisions to those epochs when given.
    """
    if rungs is not None and current_epoch not in rungs:
        return Decision(Action.CONTINUE, Reason.NOT_A_RUNG)
    past = history.rung_scores[current_epoch]
    m = len(past) + 1
    quota = max(1, math.floor(m / spec.value))
    rank = 1 + sum(1 for s in past if s < current_valid_error)
    past.append(float(current_valid_error))
    if rank <= quota:
        return Decision(Action.CONTINUE, Reason.RUNG_RANK)
    return Decision(Action.STOP, Reason.RUNG_RANK)


# ---------------------------------------------------------------------------
# learning-curve extrapolation
# ---------------------------------------------------------------------------


class Extrapolator(Protocol):
    def posterior(self, epochs, values, seed: int, key=None) -> PosteriorSamples: ...


def lce_decide(
    epochs,
    values,
    history: SharedHistory,
    spec: PolicySpec,
    engine: Extrapolator,
    seed: int,
    horizon: int,
    key=None,
) -> Decision:
    """STOP iff the posterior probability of ending worse than the incumbent is >= rho.

    Short prefixes or a missing incumbent always CONTINUE, and so does any
    engine failure: a failed extrapolation never discards.
    """
    if len(values) < MIN_PREFIX or history.best_final_error is None:
        return Decision(Action.CONTINUE, Reason.INSUFFICIENT_DATA)
    try:
        samples = engine.posterior(epochs, values, seed, key=key)
        p = prob_worse_at_horizon(samples, history.best_final_error, horizon)
    except Exception as exc:  # noqa: BLE001 - any engine failure must not discard
        logger.warning("extrapolation failed (%s: %s); continuing", type(exc).__name__, exc)
        return Decision(Action.CONTINUE, Reason.ENGINE_FAILURE)
    if p >= spec.value:
        return Decision(Action.STOP, Reason.HORIZON_PROBABILITY)
    return Decision(Action.CONTINUE, Reason.HORIZON_PROBABILITY)


# ---------------------------------------------------------------------------
# per-run policy objects used by the simulator
# ---------------------------------------------------------------------------


class Policy:
    """Binds a PolicySpec to one run's SharedHistory."""

    def __init__(self, spec: PolicySpec, i_max: int):
        spec.validate_for(i_max)
        self.spec = spec
        self.i_max = i_max
        self.history = SharedHistory()

    def decide(self, candidate_id: str, epoch: int, valid_prefix: np.ndarray) -> Decision:
        raise NotImplementedError

    def completed(self, final_valid_error: float) -> None:
        self.history.record_completion(final_valid_error)


class IEpochPolicy(Policy):
    def decide(self, candidate_id, epoch, valid_prefix):
        return iepoch_decide(epoch, self.spec)


class ShaPolicy(Policy):
    def __init__(self, spec, i_max, i_min: int = 1):
        super().__init__(spec, i_max)
        self.rungs = frozenset(sha_rungs(i_min, i_max, spec.value))

    def decide(self, candidate_id, epoch, valid_prefix):
        return sha_decide(epoch, valid_prefix[epoch - 1], self.history, self.spec, self.rungs)


class LcePolicy(Policy):
    def __init__(self, spec, i_max, engine: Extrapolator, check_every: int = 1, seed: int = 0,
                 namespace: str = ""):
        super().__init__(spec, i_max)
        self.engine = engine
        self.check_every = max(1, int(check_every))
        self.seed = seed
        self.namespace = namespace

    def decide(self, candidate_id, epoch, valid_prefix):
        if epoch >= MIN_PREFIX and (epoch - MIN_PREFIX) % self.check_every:
            return Decision(Action.CONTINUE, Reason.INSUFFICIENT_DATA)
        epochs = np.arange(1, epoch + 1, dtype=float)
        # posterior depends only on (candidate, epoch), so it is shared across runs
        seed = derive_seed(self.seed, candidate_id, epoch)
        return lce_decide(
            epochs, valid_prefix[:epoch], self.history, self.spec, self.engine,
            seed, self.i_max, key=(self.namespace, candidate_id, epoch),
        )


def make_policy(spec: PolicySpec, i_max: int, engine: Extrapolator | None = None,
                check_every: int = 1, engine_seed: int = 0, namespace: str = "") -> Policy:
    if spec.kind is Kind.IEPOCH:
        return IEpochPolicy(spec, i_max)
    if spec.kind is Kind.SHA:
        return ShaPolicy(spec, i_max)
    if engine is None:
        raise ValueError("LCE policy needs an extrapolation engine")
    return LcePolicy(spec, i_max, engine, check_every, engine_seed, namespace)

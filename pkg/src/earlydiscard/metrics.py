"""Generalized R^2 scores and the error orientation used everywhere else.

Regression uses the usual coefficient of determination. Classification uses
the prediction advantage: the 0-1 loss of the model normalised by the 0-1 loss
of the marginal-mode predictor. Both map to a generalization error
``1 - R^2`` where lower is better, 0 is perfect and 1 is constant-predictor
parity.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Hashable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DegenerateMetricError(ValueError):
    """The normalising loss of the constant predictor is zero."""


def _check_lengths(targets: Sequence, predictions: Sequence, minimum: int) -> None:
    if len(targets) != len(predictions):
        raise ValueError(
            f"targets and predictions differ in length ({len(targets)} != {len(predictions)})"
        )
    if len(targets) < minimum:
        raise ValueError(f"need at least {minimum} samples, got {len(targets)}")


def r2_from_sums(ss_res: float, ss_tot: float) -> float:
    """R^2 from pre-aggregated residual and total sums of squares."""
    if ss_tot <= 0.0:
        raise DegenerateMetricError("total sum of squares is zero (all targets identical)")
    return 1.0 - ss_res / ss_tot


def r2_regression(targets: Sequence[float], predictions: Sequence[float]) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    Raises DegenerateMetricError when every target is identical.
    """
    _check_lengths(targets, predictions, 2)
    y = np.asarray(targets, dtype=float)
    y_hat = np.asarray(predictions, dtype=float)
    if y.ndim != 1 or y_hat.ndim != 1:
        raise ValueError("targets and predictions must be 1-D")
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return r2_from_sums(ss_res, ss_tot)


def marginal_mode(labels: Sequence[Hashable]) -> Hashable:
    """Most frequent label; ties go to the first label in sorted order."""
    counts = Counter(labels)
    top = max(counts.values())
    tied = sorted(label for label, count in counts.items() if count == top)
    if len(tied) > 1:
        logger.info("mode tie between %d labels, using %r", len(tied), tied[0])
    return tied[0]


def prediction_advantage_from_counts(n_errors: int, n_mode_errors: int) -> float:
    """Prediction advantage from error counts of the model and of the mode predictor.

    Both counts are over the same samples, so the ``1/n`` factors cancel.
    """
    if n_mode_errors <= 0:
        raise DegenerateMetricError("mode predictor has zero loss (single-class targets)")
    return 1.0 - n_errors / n_mode_errors


def r2_classification(
    targets: Sequence[Hashable], predictions: Sequence[Hashable]
) -> float:
    """Prediction advantage ``1 - L01(model) / L01(mode predictor)``."""
    _check_lengths(targets, predictions, 1)
    targets = list(targets)
    predictions = list(predictions)
    mode = marginal_mode(targets)
    n_errors = sum(t != p for t, p in zip(targets, predictions))
    n_mode_errors = sum(t != mode for t in targets)
    return prediction_advantage_from_counts(n_errors, n_mode_errors)


def to_generalization_error(r2: float) -> float:
    """Map an R^2-type score to the minimised error ``1 - r2``."""
    return 1.0 - r2

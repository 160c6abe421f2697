"""Classification and policy metrics with explicit degenerate-case rules.

The positive class is "unsafe" throughout (screening for unsafe scenes is
the interest case); every report records that convention alongside its
config fingerprint so numbers stay comparable across runs.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .encoder import N_STATES
from .irl import DemonstrationSet
from .validation import DataValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    """Tallies with positive class = unsafe (label/prediction value 1)."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _as_binary(name: str, values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise DataValidationError(f"{name} must be a non-empty 1-D sequence")
    if not np.isin(arr, (0, 1)).all():
        raise DataValidationError(f"{name} must contain only 0 (safe) and 1 (unsafe)")
    return arr.astype(np.int64)


def confusion_counts(predictions, labels) -> ConfusionCounts:
    pred = _as_binary("predictions", predictions)
    lab = _as_binary("labels", labels)
    if pred.shape != lab.shape:
        raise DataValidationError("predictions and labels must be equal length")
    return ConfusionCounts(
        tp=int(((pred == 1) & (lab == 1)).sum()),
        fp=int(((pred == 1) & (lab == 0)).sum()),
        tn=int(((pred == 0) & (lab == 0)).sum()),
        fn=int(((pred == 0) & (lab == 1)).sum()),
    )


def f1_score(predictions, labels) -> float:
    """Harmonic mean of precision and recall for the unsafe class.

    Returns 0.0 when precision + recall is undefined or zero; the fully
    degenerate no-positives case additionally warns.
    """
    counts = confusion_counts(predictions, labels)
    if counts.tp == 0 and counts.fp == 0 and counts.fn == 0:
        warnings.warn(
            "no positive predictions and no positive labels; F1 reported as 0.0",
            stacklevel=2,
        )
        return 0.0
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 2 * counts.tp / denom if denom else 0.0


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; ties count one half.

    Scores follow the "higher = more unsafe" convention, e.g. the learned
    policy's unsafe-action probability per state.
    """
    s = np.asarray(scores, dtype=np.float64)
    lab = _as_binary("labels", labels)
    if s.shape != lab.shape:
        raise DataValidationError("scores and labels must be equal length")
    n_pos = int((lab == 1).sum())
    n_neg = int((lab == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataValidationError("AUC needs both classes present")
    ranks = rankdata(s)  # average ranks handle ties as 1/2
    pos_rank_sum = ranks[lab == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def learned_behavior_accuracy(policy, demos: DemonstrationSet) -> float:
    """Fraction of demonstrations whose action the greedy policy reproduces."""
    actions = np.asarray(policy, dtype=np.int64)
    if actions.shape != (N_STATES,):
        raise DataValidationError(f"policy must have {N_STATES} entries")
    if len(demos) == 0:
        raise DataValidationError("demonstration set is empty")
    matched = demos.counts[np.arange(N_STATES), actions].sum()
    return float(matched) / len(demos)


@dataclass(frozen=True)
class MetricsReport:
    f1: float
    auc: float
    learned_behavior_accuracy: float
    n_items: int
    fingerprint: str = ""

    def __post_init__(self) -> None:
        for name in ("f1", "auc", "learned_behavior_accuracy"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataValidationError(f"{name} must lie in [0, 1], got {value!r}")


def evaluate_policy(
    policy,
    unsafe_scores,
    demos: DemonstrationSet,
    fingerprint: str = "",
) -> MetricsReport:
    """Score a greedy policy against demonstrations.

    ``unsafe_scores`` is the per-state unsafe probability used for AUC;
    predictions and labels are the policy's and the demos' actions.
    """
    scores = np.asarray(unsafe_scores, dtype=np.float64)
    if scores.shape != (N_STATES,):
        raise DataValidationError(f"unsafe_scores must have {N_STATES} entries")
    states = demos.states
    predictions = np.asarray(policy, dtype=np.int64)[states]
    labels = demos.actions
    return MetricsReport(
        f1=f1_score(predictions, labels),
        auc=auc(scores[states], labels),
        learned_behavior_accuracy=learned_behavior_accuracy(policy, demos),
        n_items=len(demos),
        fingerprint=fingerprint,
    )


def save_metrics_rows(
    rows: Sequence[tuple[str, MetricsReport]], path: str | Path
) -> None:
    """CSV export: one labeled MetricsReport per row plus the fingerprint."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("setting", "f1", "auc", "learned_behavior_accuracy", "n_items", "fingerprint")
        )
        for name, report in rows:
            writer.writerow(
                (
                    name,
                    repr(report.f1),
                    repr(report.auc),
                    repr(report.learned_behavior_accuracy),
                    report.n_items,
                    report.fingerprint,
                )
            )

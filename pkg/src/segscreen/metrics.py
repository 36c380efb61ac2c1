"""Evaluation metrics: pixel-level overlap scores and slice-level
sensitivity/specificity with explicit empty-mask conventions.

Conventions, applied verbatim everywhere:
- Dice (and F1, the same number) is 1.0 when both masks are empty.
- Soft Dice is 1.0 when the probability mass and ground truth are both
  empty.
- Slice sensitivity is 0.0 when there are no positive slices;
  specificity is 1.0 when there are no negative slices.
- Class-average accuracy scores an absent class 1.0 if the prediction
  is also empty for it, else 0.0; comparisons across tools must check
  this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import BinaryMask, ScalarGrid

SOFT_DICE_EPSILON = 1e-6


def _check_dims(a, b) -> None:
    if a.frame != b.frame:
        raise ValueError(f"mask dimensions differ: {a.frame} vs {b.frame}")


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    _check_dims(pred, gt)
    p, g = pred.count, gt.count
    if p + g == 0:
        return 1.0
    inter = int(np.count_nonzero(pred.bits & gt.bits))
    return 2.0 * inter / (p + g)


def soft_dice(prob: ScalarGrid, gt: BinaryMask, epsilon: float = SOFT_DICE_EPSILON) -> float:
    """Probabilistic Dice with epsilon smoothing; 1.0 in all-empty cases."""
    _check_dims(prob, gt)
    p_sum = float(prob.values.sum())
    g_sum = float(gt.count)
    if p_sum == 0.0 and g_sum == 0.0:
        return 1.0
    inter = float(prob.values[gt.bits].sum())
    return (2.0 * inter + epsilon) / (p_sum + g_sum + epsilon)


def accuracy(pred: BinaryMask, gt: BinaryMask) -> float:
    """Fraction of pixels classified correctly."""
    _check_dims(pred, gt)
    return float(np.count_nonzero(pred.bits == gt.bits)) / (pred.width * pred.height)


def class_average_accuracy(pred: BinaryMask, gt: BinaryMask) -> float:
    """Mean of the positive-class and negative-class pixel accuracies.

    An absent class contributes 1.0 when the prediction is also empty
    for that class and 0.0 otherwise.
    """
    _check_dims(pred, gt)
    pos = gt.count
    neg = pred.width * pred.height - pos
    if pos > 0:
        tpr = int(np.count_nonzero(pred.bits & gt.bits)) / pos
    else:
        tpr = 1.0 if pred.count == 0 else 0.0
    if neg > 0:
        tnr = int(np.count_nonzero(~pred.bits & ~gt.bits)) / neg
    else:
        tnr = 1.0 if pred.count == pred.width * pred.height else 0.0
    return (tpr + tnr) / 2.0


@dataclass(frozen=True)
class SliceOutcome:
    """Slice-level call: a slice is positive if any pixel is predicted tumor."""

    predicted_positive: bool
    actually_positive: bool


def slice_sensitivity_specificity(outcomes: list[SliceOutcome]) -> tuple[float, float]:
    """Dataset sensitivity and specificity over slice outcomes.

    Sensitivity is 0.0 without positive slices; specificity is 1.0
    without negative slices.
    """
    tp = sum(1 for o in outcomes if o.actually_positive and o.predicted_positive)
    fn = sum(1 for o in outcomes if o.actually_positive and not o.predicted_positive)
    tn = sum(1 for o in outcomes if not o.actually_positive and not o.predicted_positive)
    fp = sum(1 for o in outcomes if not o.actually_positive and o.predicted_positive)
    sensitivity = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    specificity = tn / (tn + fp) if (tn + fp) > 0 else 1.0
    return sensitivity, specificity


@dataclass
class MetricsReport:
    """Per-slice metric rows plus dataset aggregates (mean and std)."""

    rows: list[dict] = field(default_factory=list)
    outcomes: list[SliceOutcome] = field(default_factory=list)

    def add_slice(self, slice_id: str, pred: BinaryMask, prob: ScalarGrid, gt: BinaryMask) -> dict:
        d = dice(pred, gt)
        row = {
            "slice_id": slice_id,
            "dice": d,
            "f1": d,
            "soft_dice": soft_dice(prob, gt),
            "accuracy": accuracy(pred, gt),
            "class_average": class_average_accuracy(pred, gt),
        }
        self.rows.append(row)
        self.outcomes.append(SliceOutcome(predicted_positive=pred.count > 0,
                                          actually_positive=gt.count > 0))
        return row

    def to_dict(self) -> dict:
        sens, spec = slice_sensitivity_specificity(self.outcomes)
        summary: dict = {"n_slices": len(self.rows), "sensitivity": sens, "specificity": spec}
        for key in ("dice", "f1", "soft_dice", "accuracy", "class_average"):
            vals = np.array([r[key] for r in self.rows], dtype=np.float64)
            summary[key] = {
                "mean": float(vals.mean()) if vals.size else 0.0,
                "std": float(vals.std()) if vals.size else 0.0,
            }
        return {"per_slice": list(self.rows), "summary": summary}

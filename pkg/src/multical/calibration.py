"""
Per-category empirical calibration error.

A category is a (group, predicted label) pair. Its empirical calibration
error is the mean of h(x) - y over the evaluation examples in the group that
the model assigns the category's label; with hard predictions this equals
the label minus the mean true label. Empty categories have no error (None).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from multical.models import LABEL_SPACE, LabeledDataset, MulticalError, ValidationError
from multical.trainers import PredictorModel

logger = logging.getLogger(__name__)


class NoNonemptyGroupError(MulticalError):
    """Raised when every group is empty, so gamma and psi are undefined."""

    code = "no_nonempty_group"


@dataclass(frozen=True)
class Category:
    """A (group, predicted label) pair."""

    group: str
    predicted_label: int

    def __post_init__(self):
        if self.predicted_label not in LABEL_SPACE:
            raise ValidationError(f"Invalid predicted_label: {self.predicted_label!r}")


@dataclass(frozen=True)
class CategoryStats:
    """
    Frequencies and calibration error of one category on an evaluation set.

    Attributes:
        category: The (group, label) pair
        member_count: Examples in the group predicted with the label
        gamma_hat: Fraction of the evaluation set in the group
        psi_hat: Fraction of the group predicted with the label (0 for an empty group)
        frequency: gamma_hat * psi_hat
        calibration_error: Mean of h(x) - y over members, None when there are none
    """

    category: Category
    member_count: int
    gamma_hat: float
    psi_hat: float
    frequency: float
    calibration_error: Optional[float]


def calibration_error_from_predictions(
    predictions: np.ndarray, labels: np.ndarray, members: np.ndarray
) -> Optional[float]:
    """
    Sum of (h(x) - y) over ``members`` divided by their count.

    The numerator is an integer sum, so the result is the correctly rounded
    ratio regardless of summation order.
    """
    count = int(members.sum())
    if count == 0:
        return None
    return int((predictions[members] - labels[members]).sum()) / count


def _require_nonempty(ds: LabeledDataset) -> None:
    if ds.n_examples == 0:
        raise ValidationError("Evaluation set is empty")


def empirical_calibration_error(model: PredictorModel, eval_set: LabeledDataset, cat: Category) -> Optional[float]:
    """
    Empirical calibration error of ``model`` on one category.

    Returns:
        A value in [-1, 1], or None when no evaluation example falls in the category

    Raises:
        ValidationError: If the evaluation set is empty
        UnknownGroupError: If the category's group is not declared
    """
    _require_nonempty(eval_set)
    group_mask = eval_set.group_mask(cat.group)
    predictions = model.predict_batch(eval_set.features)
    members = group_mask & (predictions == cat.predicted_label)
    return calibration_error_from_predictions(predictions, eval_set.labels, members)


def stats_from_predictions(predictions: np.ndarray, eval_set: LabeledDataset) -> List[CategoryStats]:
    """Category statistics for precomputed hard predictions, groups in declared order, label 0 before 1."""
    n = eval_set.n_examples
    stats = []
    for group in eval_set.groups:
        group_mask = eval_set.group_mask(group)
        group_size = int(group_mask.sum())
        gamma_hat = group_size / n
        for label in LABEL_SPACE:
            members = group_mask & (predictions == label)
            count = int(members.sum())
            psi_hat = count / group_size if group_size else 0.0
            stats.append(CategoryStats(
                category=Category(group, label),
                member_count=count,
                gamma_hat=gamma_hat,
                psi_hat=psi_hat,
                frequency=gamma_hat * psi_hat,
                calibration_error=calibration_error_from_predictions(predictions, eval_set.labels, members),
            ))
    return stats


def category_stats(model: PredictorModel, eval_set: LabeledDataset) -> List[CategoryStats]:
    """
    One CategoryStats per declared group and label.

    Raises:
        ValidationError: If the evaluation set is empty
    """
    _require_nonempty(eval_set)
    return stats_from_predictions(model.predict_batch(eval_set.features), eval_set)


def min_frequency_params(stats: List[CategoryStats]) -> Tuple[float, float]:
    """
    Estimate (gamma, psi) as minima over the observed statistics.

    gamma is the smallest gamma_hat among nonempty groups; psi is the smallest
    psi_hat among categories with at least one member.

    Raises:
        NoNonemptyGroupError: If no group has members
    """
    nonempty = [s for s in stats if s.member_count > 0]
    if not nonempty:
        raise NoNonemptyGroupError("No group has any member in the evaluation set")
    gamma = min(s.gamma_hat for s in stats if s.gamma_hat > 0)
    psi = min(s.psi_hat for s in nonempty)
    return gamma, psi


def interesting_categories(stats: List[CategoryStats], gamma: float, psi: float) -> List[CategoryStats]:
    """Categories whose group frequency is at least ``gamma`` and prediction frequency at least ``psi``."""
    return [s for s in stats if s.gamma_hat >= gamma and s.psi_hat >= psi]

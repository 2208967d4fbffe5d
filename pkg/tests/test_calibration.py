"""
Tests for per-category calibration error and frequency statistics.
"""

import itertools

import numpy as np
import pytest

from multical.calibration import (
    Category,
    NoNonemptyGroupError,
    calibration_error_from_predictions,
    category_stats,
    empirical_calibration_error,
    interesting_categories,
    min_frequency_params,
    stats_from_predictions,
)
from multical.models import LabeledDataset, UnknownGroupError, ValidationError
from multical.trainers import ModelKind, PredictorModel, constant_predictor

def threshold_model():
    """Predicts 1 exactly when the single feature is non-negative."""
    return PredictorModel(ModelKind.LINEAR_SVM, {"w": [1.0], "bias": [0.0]})

def make_dataset(xs, labels, membership, groups=("A", "B")):
    return LabeledDataset(
        features=np.asarray(xs, dtype=float).reshape(-1, 1),
        labels=labels,
        groups=groups,
        membership=membership,
    )

@pytest.fixture
def three_in_a():
    """Group A holds 3 examples predicted (1, 1, 0) with labels (1, 0, 0)."""
    return make_dataset(
        [1.0, 2.0, -1.0, 3.0],
        [1, 0, 0, 1],
        [[True, False], [True, False], [True, False], [False, True]],
    )

# =============================================================================
# Test Calibration Error
# =============================================================================

def test_calibration_error_hand_example(three_in_a):
    """Category (A, 1) has members with h - y = 0 and 1, so the error is 0.5."""
    assert empirical_calibration_error(threshold_model(), three_in_a, Category("A", 1)) == 0.5

def test_calibration_error_of_label_zero_category(three_in_a):
    """(A, 0) has one member predicted 0 with label 0."""
    assert empirical_calibration_error(threshold_model(), three_in_a, Category("A", 0)) == 0.0

def test_calibration_error_empty_category_is_none(three_in_a):
    """No member in (B, 0) means the error is undefined."""
    assert empirical_calibration_error(threshold_model(), three_in_a, Category("B", 0)) is None

def test_perfect_predictor_has_zero_error():
    """h(x) = y everywhere gives 0 for every nonempty category."""
    xs = [-2.0, -1.0, 1.0, 2.0]
    ds = make_dataset(xs, [0, 0, 1, 1], [[True, False], [False, True], [True, True], [False, True]])

    errors = [s.calibration_error for s in category_stats(threshold_model(), ds)]

    assert all(e == 0.0 for e in errors if e is not None)

def test_calibration_error_rejects_empty_eval_set(three_in_a):
    """An empty evaluation set is invalid."""
    with pytest.raises(ValidationError):
        empirical_calibration_error(threshold_model(), three_in_a.subset([]), Category("A", 1))

def test_calibration_error_unknown_group(three_in_a):
    """Undeclared groups raise UnknownGroupError."""
    with pytest.raises(UnknownGroupError):
        empirical_calibration_error(threshold_model(), three_in_a, Category("C", 1))

def test_category_rejects_non_binary_label():
    """Predicted labels must be 0 or 1."""
    with pytest.raises(ValidationError):
        Category("A", 2)

def test_calibration_error_is_order_independent():
    """The integer numerator makes the result identical under any permutation."""
    rng = np.random.default_rng(0)
    predictions = rng.integers(0, 2, 999)
    labels = rng.integers(0, 2, 999)
    members = rng.random(999) < 0.7
    perm = rng.permutation(999)

    first = calibration_error_from_predictions(predictions, labels, members)
    second = calibration_error_from_predictions(predictions[perm], labels[perm], members[perm])

    assert first == second

def brute_force_error(predictions, labels, members, label):
    """Mean of prediction minus label over members predicted as label, by direct loop."""
    diffs = [
        int(predictions[i]) - int(labels[i])
        for i in range(len(labels))
        if members[i] and predictions[i] == label
    ]
    return sum(diffs) / len(diffs) if diffs else None

@pytest.mark.parametrize("seed", range(20))
def test_calibration_error_matches_brute_force(seed):
    """Vectorized statistics agree with a direct loop over examples."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    xs = rng.standard_normal(n)
    labels = rng.integers(0, 2, n)
    membership = rng.random((n, 2)) < 0.5
    ds = make_dataset(xs, labels, membership)
    model = threshold_model()
    predictions = [model.predict([x]) for x in xs]

    for group, label in itertools.product(("A", "B"), (0, 1)):
        j = ds.groups.index(group)
        expected = brute_force_error(predictions, labels, membership[:, j], label)
        assert empirical_calibration_error(model, ds, Category(group, label)) == expected

@pytest.mark.slow
def test_calibration_error_matches_brute_force_on_many_datasets():
    """A thousand random datasets with three overlapping groups match the direct loop exactly."""
    groups = ("A", "B", "C")
    model = threshold_model()
    for seed in range(1000):
        rng = np.random.default_rng(10_000 + seed)
        n = int(rng.integers(1, 201))
        xs = rng.standard_normal(n)
        labels = rng.integers(0, 2, n)
        membership = rng.random((n, 3)) < rng.uniform(0.2, 0.8, 3)
        ds = make_dataset(xs, labels, membership, groups=groups)
        predictions = (xs >= 0).astype(int)

        for j, label in itertools.product(range(3), (0, 1)):
            expected = brute_force_error(predictions, labels, membership[:, j], label)
            actual = empirical_calibration_error(model, ds, Category(groups[j], label))
            assert actual == expected, f"seed={seed} group={groups[j]} label={label}"

# =============================================================================
# Test Category Statistics
# =============================================================================

def test_category_stats_frequencies():
    """Group A is 4 of 10 examples with 3 predicted 1: gamma 0.4, psi 0.75, frequency 0.3."""
    xs = [1.0, 1.0, 1.0, -1.0] + [-1.0] * 6
    membership = [[True, False]] * 4 + [[False, True]] * 6
    ds = make_dataset(xs, [1] * 10, membership)

    stats = {(s.category.group, s.category.predicted_label): s for s in category_stats(threshold_model(), ds)}

    a1 = stats[("A", 1)]
    assert a1.gamma_hat == 0.4
    assert a1.psi_hat == 0.75
    assert a1.frequency == pytest.approx(0.3)
    assert a1.member_count == 3
    assert stats[("A", 0)].psi_hat == 0.25

def test_category_stats_order_and_empty_group():
    """Stats follow declared group order, label 0 first; empty groups get psi 0 and no error."""
    ds = make_dataset([1.0, 2.0], [1, 1], [[True, False], [True, False]])

    stats = category_stats(threshold_model(), ds)

    assert [(s.category.group, s.category.predicted_label) for s in stats] == [
        ("A", 0), ("A", 1), ("B", 0), ("B", 1),
    ]
    assert stats[1].psi_hat == 1.0 and stats[0].psi_hat == 0.0
    assert stats[2].gamma_hat == 0.0 and stats[2].calibration_error is None

def test_disjoint_exhaustive_groups_frequencies_sum_to_one():
    """gamma_hat sums to 1 over a partition."""
    rng = np.random.default_rng(3)
    in_a = rng.random(50) < 0.3
    ds = make_dataset(rng.standard_normal(50), rng.integers(0, 2, 50), np.column_stack([in_a, ~in_a]))

    stats = stats_from_predictions(threshold_model().predict_batch(ds.features), ds)

    assert sum(s.gamma_hat for s in stats if s.category.predicted_label == 0) == pytest.approx(1.0)

# =============================================================================
# Test Minimum Frequencies
# =============================================================================

def test_min_frequency_params_balanced_groups():
    """Balanced disjoint groups give gamma 0.5."""
    ds = make_dataset([1.0, -1.0, 1.0, -1.0], [1, 0, 1, 0], [[True, False], [True, False], [False, True], [False, True]])

    gamma, psi = min_frequency_params(category_stats(threshold_model(), ds))

    assert gamma == 0.5
    assert psi == 0.5

def test_min_frequency_params_single_group():
    """One group covering everything gives gamma 1."""
    ds = make_dataset([1.0, 2.0], [1, 1], [[True], [True]], groups=("A",))

    assert min_frequency_params(category_stats(threshold_model(), ds)) == (1.0, 1.0)

def test_min_frequency_params_no_members():
    """No nonempty group leaves gamma undefined."""
    ds = make_dataset([1.0], [1], [[False, False]])

    with pytest.raises(NoNonemptyGroupError):
        min_frequency_params(category_stats(threshold_model(), ds))

def test_interesting_categories_filters_by_both_thresholds(three_in_a):
    """Only categories meeting gamma and psi survive."""
    stats = category_stats(threshold_model(), three_in_a)

    kept = interesting_categories(stats, gamma=0.5, psi=0.5)

    assert [(s.category.group, s.category.predicted_label) for s in kept] == [("A", 1)]

def test_constant_predictor_puts_everything_in_one_label(three_in_a):
    """A constant model leaves the other label's categories empty."""
    stats = category_stats(constant_predictor(0, 1), three_in_a)

    assert all(s.member_count == 0 for s in stats if s.category.predicted_label == 1)

"""
Tests for the from-scratch trainers, predictors and weight norms.
"""

import numpy as np
import pytest

from multical.models import LabeledDataset, ValidationError
from multical.trainers import (
    LinearSvmConfig,
    ModelKind,
    NonFiniteLossError,
    PredictorModel,
    RbfSvmConfig,
    ReluNetConfig,
    accuracy,
    constant_predictor,
    init_relu_params,
    make_config,
    relu_loss_and_grad,
    spectral_norm,
    train,
    train_linear_svm,
    train_rbf_svm,
    train_relu_net,
    two_one_norm,
    weight_norms,
)


def dataset(X, y):
    X = np.asarray(X, dtype=float)
    return LabeledDataset(features=X, labels=y, groups=(), membership=np.zeros((len(y), 0)))


def clusters(n=40, seed=0):
    """Two well separated Gaussian clusters around (3, 3) and (-3, -3)."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centers = np.where(y[:, None] == 1, 3.0, -3.0)
    return dataset(centers + 0.3 * rng.standard_normal((n, 2)), y)


def xor():
    return dataset([[1, 1], [-1, -1], [1, -1], [-1, 1]], [1, 1, 0, 0])


# =============================================================================
# Test Model Kinds and Configs
# =============================================================================

def test_model_kind_parse_is_lenient():
    """Kinds parse case- and separator-insensitively."""
    assert ModelKind.parse("LinearSVM") is ModelKind.LINEAR_SVM
    assert ModelKind.parse("rbf_svm") is ModelKind.RBF_SVM
    assert ModelKind.parse("relu-net") is ModelKind.RELU_NET
    with pytest.raises(ValidationError):
        ModelKind.parse("forest")


def test_make_config_ignores_other_kinds_keys():
    """Keys a kind does not use are dropped; the seed is applied."""
    cfg = make_config(ModelKind.LINEAR_SVM, {"reg_lambda": 0.1, "hidden_units": 5}, seed=3)

    assert cfg == LinearSvmConfig(reg_lambda=0.1, seed=3)


def test_config_validation():
    """Non-positive settings are rejected."""
    with pytest.raises(ValidationError):
        LinearSvmConfig(reg_lambda=0).validate()
    with pytest.raises(ValidationError):
        RbfSvmConfig(gamma=-1).validate()
    with pytest.raises(ValidationError):
        ReluNetConfig(batch_size=0).validate()


# =============================================================================
# Test Linear SVM
# =============================================================================

def test_linear_svm_separates_clusters():
    """Pegasos reaches perfect training accuracy on separable clusters."""
    ds = clusters()
    model = train_linear_svm(ds, LinearSvmConfig(reg_lambda=0.01, epochs=30))

    assert accuracy(model, ds) == 1.0
    assert len(model.history) == 30


def test_linear_svm_respects_projection_radius():
    """The learned weight (with bias) stays inside the 1/sqrt(lambda) ball."""
    model = train_linear_svm(clusters(), LinearSvmConfig(reg_lambda=0.5, epochs=5))
    w = np.append(model.params["w"], model.params["bias"])

    assert np.linalg.norm(w) <= 1 / np.sqrt(0.5) + 1e-12


def test_linear_svm_is_invariant_to_input_order():
    """Shuffling the training rows gives a bit-identical model."""
    ds = clusters()
    perm = np.random.default_rng(5).permutation(ds.n_examples)
    cfg = LinearSvmConfig(reg_lambda=0.01, epochs=5, seed=9)

    a = train_linear_svm(ds, cfg)
    b = train_linear_svm(ds.subset(perm), cfg)

    assert np.array_equal(a.params["w"], b.params["w"])
    assert np.array_equal(a.params["bias"], b.params["bias"])


def test_linear_svm_seed_determinism():
    """The same seed gives the same model."""
    ds = clusters()
    cfg = LinearSvmConfig(epochs=3, seed=1)

    assert np.array_equal(train_linear_svm(ds, cfg).params["w"], train_linear_svm(ds, cfg).params["w"])


# =============================================================================
# Test RBF SVM
# =============================================================================

def test_rbf_svm_solves_xor():
    """Kernel Pegasos fits the 4-point XOR."""
    ds = xor()
    model = train_rbf_svm(ds, RbfSvmConfig(gamma=1.0, reg_lambda=1.0, epochs=30))

    assert accuracy(model, ds) == 1.0
    assert model.params["support"].shape[0] == 4


def test_rbf_svm_scores_match_kernel_expansion():
    """raw_score equals the explicit kernel sum over support vectors."""
    ds = xor()
    model = train_rbf_svm(ds, RbfSvmConfig(gamma=0.7, epochs=5))
    x = np.array([0.3, -0.2])
    p = model.params

    expected = sum(c * np.exp(-0.7 * np.sum((s - x) ** 2)) for s, c in zip(p["support"], p["coef"]))

    assert model.raw_score(x) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_rbf_svm_has_no_offset():
    """The bias is stored as zero, so far from every support vector the score is zero."""
    model = train_rbf_svm(xor(), RbfSvmConfig(gamma=0.7, epochs=5))

    assert model.params["bias"].tolist() == [0.0]
    assert model.raw_score(np.array([100.0, 100.0])) == 0.0
    assert model.predict([100.0, 100.0]) == 1


def test_rbf_svm_tiny_gamma_predicts_majority():
    """As gamma goes to 0 the kernel is constant and the majority label wins."""
    X = np.arange(16, dtype=float).reshape(8, 2)
    ds = dataset(X, [1, 1, 1, 0, 1, 1, 0, 1])
    model = train_rbf_svm(ds, RbfSvmConfig(gamma=1e-9, reg_lambda=1.0, epochs=10))

    assert model.predict_batch(X).tolist() == [1] * 8


# =============================================================================
# Test ReLU Network
# =============================================================================

@pytest.mark.parametrize("seed", range(10))
def test_relu_gradient_matches_finite_differences(seed):
    """Analytic gradients agree with central differences to 1e-4 relative error."""
    rng = np.random.default_rng(seed)
    params = init_relu_params(3, 5, rng)
    X = rng.standard_normal((6, 3))
    y = np.where(rng.random(6) < 0.5, -1.0, 1.0)
    _, grads = relu_loss_and_grad(params, X, y)
    h = 1e-5

    for key, value in params.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[key][idx] += h
            minus[key][idx] -= h
            numeric[idx] = (relu_loss_and_grad(plus, X, y)[0] - relu_loss_and_grad(minus, X, y)[0]) / (2 * h)
        denom = np.linalg.norm(numeric) + np.linalg.norm(grads[key])
        if denom == 0:
            continue
        assert np.linalg.norm(numeric - grads[key]) / denom <= 1e-4


def test_relu_net_separates_clusters():
    """A small network reaches perfect accuracy on separable clusters."""
    ds = clusters(n=20)
    model = train_relu_net(ds, ReluNetConfig(hidden_units=8, learning_rate=0.1, epochs=500))

    assert accuracy(model, ds) == 1.0
    assert model.history[-1] < model.history[0]


def test_zero_output_layer_scores_zero_and_predicts_one():
    """With W2 = 0 and b2 = 0 every score is 0, which maps to label 1."""
    model = PredictorModel(ModelKind.RELU_NET, {
        "W1": np.ones((3, 2)), "b1": np.zeros(3), "W2": np.zeros((1, 3)), "b2": np.zeros(1),
    })
    X = np.array([[1.0, -2.0], [5.0, 5.0]])

    assert model.raw_scores(X).tolist() == [0.0, 0.0]
    assert model.predict_batch(X).tolist() == [1, 1]


def test_relu_net_divergence_raises():
    """An absurd learning rate overflows the loss."""
    ds = dataset(np.random.default_rng(0).standard_normal((8, 2)) * 1000, [0, 1] * 4)

    with pytest.raises(NonFiniteLossError):
        train_relu_net(ds, ReluNetConfig(hidden_units=16, learning_rate=1e300, epochs=5, batch_size=2))


# =============================================================================
# Test Degenerate Data and Predictors
# =============================================================================

@pytest.mark.parametrize("kind", list(ModelKind))
def test_single_label_training_returns_constant_model(kind):
    """All-equal labels give a degenerate model predicting that label."""
    ds = dataset([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]], [1, 1, 1])
    cfg = make_config(kind, {"hidden_units": 4})

    model = train(kind, ds, cfg)

    assert model.degenerate
    assert model.kind is kind
    assert model.predict_batch(np.array([[9.0, 9.0], [-9.0, 0.0]])).tolist() == [1, 1]


def test_empty_training_set_is_rejected():
    """Training needs at least one example."""
    with pytest.raises(ValidationError):
        train_linear_svm(dataset(np.zeros((0, 2)), []), LinearSvmConfig())


def test_zero_score_predicts_positive():
    """A score of exactly zero maps to label 1."""
    model = PredictorModel(ModelKind.LINEAR_SVM, {"w": [0.0, 0.0], "bias": [0.0]})

    assert model.predict([1.0, 2.0]) == 1


def test_constant_predictor():
    """constant_predictor predicts its label everywhere."""
    model = constant_predictor(0, 3)

    assert model.predict_batch(np.eye(3)).tolist() == [0, 0, 0]


def test_accuracy_on_empty_set_is_nan():
    """Accuracy of an empty evaluation set is undefined."""
    assert np.isnan(accuracy(constant_predictor(1, 2), dataset(np.zeros((0, 2)), [])))


def test_model_dict_round_trip_preserves_scores():
    """to_dict/from_dict give bit-identical scores."""
    ds = clusters()
    model = train_linear_svm(ds, LinearSvmConfig(epochs=3))

    again = PredictorModel.from_dict(model.to_dict())

    assert np.array_equal(again.raw_scores(ds.features), model.raw_scores(ds.features))


# =============================================================================
# Test Weight Norms
# =============================================================================

def test_spectral_norm_matches_svd():
    """Power iteration converges to the largest singular value."""
    W = np.random.default_rng(2).standard_normal((5, 3))

    assert spectral_norm(W) == pytest.approx(np.linalg.norm(W, 2), rel=1e-6)


def test_spectral_norm_of_zero_matrix():
    """The zero matrix has norm 0."""
    assert spectral_norm(np.zeros((3, 3))) == 0.0


def test_two_one_norm_sums_row_norms():
    """(2,1) norm is the sum of row Euclidean norms."""
    assert two_one_norm(np.array([[3.0, 4.0], [0.0, 1.0]])) == 6.0


def test_weight_norms_cover_both_layers():
    """Norms are reported for W1 then W2."""
    model = PredictorModel(ModelKind.RELU_NET, {
        "W1": [[3.0, 4.0], [0.0, 0.0]], "b1": [0.0, 0.0], "W2": [[2.0, 0.0]], "b2": [0.0],
    })

    norms = weight_norms(model)

    assert norms.spectral == pytest.approx((5.0, 2.0))
    assert norms.two_one == pytest.approx((5.0, 2.0))


def test_weight_norms_need_relu_net():
    """Linear models have no layer norms."""
    with pytest.raises(ValidationError):
        weight_norms(constant_predictor(1, 2))


def test_spectral_and_two_one_norms_of_diagonal_matrices():
    """Identity has s=1, b=2; diag(3, 4) has s=4, b=7."""
    assert spectral_norm(np.eye(2)) == pytest.approx(1.0)
    assert two_one_norm(np.eye(2)) == 2.0
    assert spectral_norm(np.diag([3.0, 4.0])) == pytest.approx(4.0)
    assert two_one_norm(np.diag([3.0, 4.0])) == 7.0

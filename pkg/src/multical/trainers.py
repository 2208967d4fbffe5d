"""
From-scratch training of linear SVMs, RBF kernel SVMs and two-layer ReLU networks.

All three families share the PredictorModel contract: ``raw_score`` gives a
real score and ``predict`` thresholds it at zero (a tie predicts label 1).
Labels are stored as {0, 1}; trainers work with {-1, +1} internally.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from multical.models import LabeledDataset, MulticalError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_REG_LAMBDA = 1e-4
DEFAULT_EPOCHS = 30
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_HIDDEN_UNITS = 1000
DEFAULT_BATCH_SIZE = 32
DEFAULT_GAMMA = 1.0

POWER_ITERATION_TOL = 1e-8
POWER_ITERATION_MAX_ITER = 1000


class ModelKind(Enum):
    """Supported predictor classes."""
    LINEAR_SVM = "LinearSVM"
    RBF_SVM = "RbfSVM"
    RELU_NET = "ReluNet"

    @classmethod
    def parse(cls, value: Union[str, "ModelKind"]) -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        lowered = str(value).strip().lower().replace("_", "").replace("-", "")
        for kind in cls:
            if kind.value.lower() == lowered:
                return kind
        raise ValidationError(f"Invalid model kind: {value}")


class NonFiniteLossError(MulticalError):
    """Raised when training diverges; usually the learning rate is too high."""

    code = "non_finite_loss"


@dataclass
class LinearSvmConfig:
    """Pegasos settings for the linear SVM."""

    reg_lambda: float = DEFAULT_REG_LAMBDA
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0

    def validate(self) -> None:
        if not self.reg_lambda > 0:
            raise ValidationError("reg_lambda must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")


@dataclass
class RbfSvmConfig:
    """Kernel Pegasos settings; K(x, x') = exp(-gamma * |x - x'|^2)."""

    gamma: float = DEFAULT_GAMMA
    reg_lambda: float = DEFAULT_REG_LAMBDA
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0

    def validate(self) -> None:
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        if not self.reg_lambda > 0:
            raise ValidationError("reg_lambda must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")


@dataclass
class ReluNetConfig:
    """Mini-batch gradient descent settings for the two-layer ReLU network."""

    hidden_units: int = DEFAULT_HIDDEN_UNITS
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE

    def validate(self) -> None:
        if self.hidden_units < 1:
            raise ValidationError("hidden_units must be at least 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")


TrainerConfig = Union[LinearSvmConfig, RbfSvmConfig, ReluNetConfig]

CONFIG_TYPES = {
    ModelKind.LINEAR_SVM: LinearSvmConfig,
    ModelKind.RBF_SVM: RbfSvmConfig,
    ModelKind.RELU_NET: ReluNetConfig,
}


@dataclass(eq=False)
class PredictorModel:
    """
    A trained classifier.

    Attributes:
        kind: Predictor class
        params: Kind-specific arrays
            LinearSVM: w (d,), bias (1,)
            RbfSVM: support (k, d), coef (k,), gamma (1,), bias (1,)
            ReluNet: W1 (h, d), b1 (h,), W2 (1, h), b2 (1,)
        config: Training configuration echo
        degenerate: True when training saw a single label and returned a constant
        history: Per-epoch training objective
    """

    kind: ModelKind
    params: Dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    degenerate: bool = False
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        for array in self.params.values():
            array.setflags(write=False)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        """Scores for a batch of rows."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        p = self.params
        if self.kind is ModelKind.LINEAR_SVM:
            return X @ p["w"] + p["bias"][0]
        if self.kind is ModelKind.RBF_SVM:
            if p["coef"].size == 0:
                return np.full(X.shape[0], p["bias"][0])
            K = np.exp(-p["gamma"][0] * cdist(X, p["support"], "sqeuclidean"))
            return K @ p["coef"] + p["bias"][0]
        hidden = np.maximum(X @ p["W1"].T + p["b1"], 0.0)
        return hidden @ p["W2"][0] + p["b2"][0]

    def raw_score(self, x) -> float:
        return float(self.raw_scores(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Hard labels in {0, 1}; a score of exactly 0 predicts 1."""
        return (self.raw_scores(X) >= 0).astype(np.int64)

    def predict(self, x) -> int:
        return 1 if self.raw_score(x) >= 0 else 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "config": dict(self.config),
            "degenerate": self.degenerate,
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PredictorModel":
        if "kind" not in data or "params" not in data:
            raise KeyError("Missing required field: kind or params")
        return cls(
            kind=ModelKind.parse(data["kind"]),
            params={k: np.asarray(v, dtype=np.float64) for k, v in data["params"].items()},
            config=data.get("config", {}),
            degenerate=bool(data.get("degenerate", False)),
            history=list(data.get("history", [])),
        )


def _signed_labels(labels: np.ndarray) -> np.ndarray:
    return np.where(labels == 1, 1.0, -1.0)


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order sorted by (features..., label), independent of input order."""
    keys = [y] + [X[:, j] for j in reversed(range(X.shape[1]))]
    return np.lexsort(keys)


def _prepare(train: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    if train.n_examples < 1:
        raise ValidationError("Training set is empty")
    if train.dim < 1:
        raise ValidationError("Training set has no features")
    order = _canonical_order(train.features, train.labels)
    return train.features[order], _signed_labels(train.labels[order])


def _constant_params(kind: ModelKind, dim: int, score: float) -> Dict[str, np.ndarray]:
    if kind is ModelKind.LINEAR_SVM:
        return {"w": np.zeros(dim), "bias": np.array([score])}
    if kind is ModelKind.RBF_SVM:
        return {
            "support": np.zeros((0, dim)),
            "coef": np.zeros(0),
            "gamma": np.array([DEFAULT_GAMMA]),
            "bias": np.array([score]),
        }
    return {"W1": np.zeros((1, dim)), "b1": np.zeros(1), "W2": np.zeros((1, 1)), "b2": np.array([score])}


def constant_predictor(label: int, dim: int, kind: ModelKind = ModelKind.LINEAR_SVM) -> PredictorModel:
    """A model predicting ``label`` everywhere (score +1 or -1)."""
    score = 1.0 if label == 1 else -1.0
    return PredictorModel(kind, _constant_params(kind, dim, score), degenerate=True)


def _degenerate(kind: ModelKind, train: LabeledDataset, cfg: TrainerConfig) -> Optional[PredictorModel]:
    labels = np.unique(train.labels)
    if labels.size > 1:
        return None
    label = int(labels[0])
    logger.warning("All %d training labels equal %d; returning a constant %s", train.n_examples, label, kind.value)
    model = constant_predictor(label, train.dim, kind)
    model.config = asdict(cfg)
    return model


def pegasos_objective(w: np.ndarray, Xa: np.ndarray, y: np.ndarray, reg_lambda: float) -> float:
    """Regularized hinge objective lambda/2 |w|^2 + mean(max(0, 1 - y <w, x>))."""
    hinge = np.maximum(0.0, 1.0 - y * (Xa @ w))
    return float(0.5 * reg_lambda * (w @ w) + hinge.mean())


def train_linear_svm(train: LabeledDataset, cfg: LinearSvmConfig) -> PredictorModel:
    """
    Train a linear SVM with Pegasos (stochastic subgradient with projection).

    The bias is learned as the weight of a constant feature. Step t uses
    eta_t = 1/(lambda t) and the iterate is projected onto the ball of
    radius 1/sqrt(lambda).

    Args:
        train: Training set
        cfg: Regularization, epochs and seed

    Returns:
        A LinearSVM model; a constant model (degenerate=True) if all labels agree
    """
    cfg.validate()
    X, y = _prepare(train)
    constant = _degenerate(ModelKind.LINEAR_SVM, train, cfg)
    if constant is not None:
        return constant

    n = X.shape[0]
    Xa = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(Xa.shape[1])
    radius = 1.0 / math.sqrt(cfg.reg_lambda)
    rng = np.random.default_rng(cfg.seed)
    history = []
    t = 0
    for epoch in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (cfg.reg_lambda * t)
            margin = y[i] * (w @ Xa[i])
            w *= 1.0 - 1.0 / t
            if margin < 1.0:
                w += eta * y[i] * Xa[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
        history.append(pegasos_objective(w, Xa, y, cfg.reg_lambda))
        logger.debug("linear svm epoch %d objective %.6g", epoch + 1, history[-1])

    return PredictorModel(
        ModelKind.LINEAR_SVM,
        {"w": w[:-1].copy(), "bias": w[-1:].copy()},
        config=asdict(cfg),
        history=history,
    )


def train_rbf_svm(train: LabeledDataset, cfg: RbfSvmConfig) -> PredictorModel:
    """
    Train an RBF kernel SVM with kernelized Pegasos.

    alpha_i counts the steps at which example i violated the margin; the
    predictor is h(x) = sum_i alpha_i y_i K(x_i, x) / (lambda T). Kernel rows
    are evaluated against the current support only.

    There is no separate offset: ``bias`` is stored as 0 and the decision
    threshold stays at zero, so the predictor lies in the RKHS ball whose
    Rademacher complexity ``kernel_rademacher_closed_form_bound`` describes.

    Args:
        train: Training set
        cfg: Kernel width, regularization, epochs and seed

    Returns:
        An RbfSVM model holding its support vectors and coefficients
    """
    cfg.validate()
    X, y = _prepare(train)
    constant = _degenerate(ModelKind.RBF_SVM, train, cfg)
    if constant is not None:
        constant.params = {**constant.params, "gamma": np.array([cfg.gamma])}
        return constant

    n = X.shape[0]
    alpha = np.zeros(n)
    rng = np.random.default_rng(cfg.seed)
    t = 0
    for epoch in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            support = np.flatnonzero(alpha)
            score = 0.0
            if support.size:
                sq = ((X[support] - X[i]) ** 2).sum(axis=1)
                score = (alpha[support] * y[support]) @ np.exp(-cfg.gamma * sq)
            if y[i] * score / (cfg.reg_lambda * t) < 1.0:
                alpha[i] += 1.0
        logger.debug("rbf svm epoch %d support size %d", epoch + 1, int((alpha > 0).sum()))

    support = np.flatnonzero(alpha)
    coef = alpha[support] * y[support] / (cfg.reg_lambda * t)
    return PredictorModel(
        ModelKind.RBF_SVM,
        {
            "support": X[support].copy(),
            "coef": coef,
            "gamma": np.array([cfg.gamma]),
            "bias": np.zeros(1),
        },
        config=asdict(cfg),
    )


def init_relu_params(dim: int, hidden_units: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for every layer."""
    bound1 = 1.0 / math.sqrt(dim)
    bound2 = 1.0 / math.sqrt(hidden_units)
    return {
        "W1": rng.uniform(-bound1, bound1, size=(hidden_units, dim)),
        "b1": rng.uniform(-bound1, bound1, size=hidden_units),
        "W2": rng.uniform(-bound2, bound2, size=(1, hidden_units)),
        "b2": rng.uniform(-bound2, bound2, size=1),
    }


def relu_loss_and_grad(
    params: Dict[str, np.ndarray], X: np.ndarray, y: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean logistic loss log(1 + exp(-y f(x))) and its gradients.

    Args:
        params: W1, b1, W2, b2
        X: Batch of rows
        y: Labels in {-1, +1}

    Returns:
        (loss, gradients keyed like params)
    """
    W1, b1, W2, b2 = params["W1"], params["b1"], params["W2"], params["b2"]
    n = X.shape[0]
    pre = X @ W1.T + b1
    hidden = np.maximum(pre, 0.0)
    scores = hidden @ W2[0] + b2[0]
    neg_margin = -y * scores
    loss = float(np.logaddexp(0.0, neg_margin).mean())

    d_scores = -y * expit(neg_margin) / n
    d_hidden = np.outer(d_scores, W2[0]) * (pre > 0)
    grads = {
        "W1": d_hidden.T @ X,
        "b1": d_hidden.sum(axis=0),
        "W2": (d_scores @ hidden).reshape(1, -1),
        "b2": np.array([d_scores.sum()]),
    }
    return loss, grads


def train_relu_net(train: LabeledDataset, cfg: ReluNetConfig) -> PredictorModel:
    """
    Train a one-hidden-layer ReLU network by mini-batch gradient descent.

    Args:
        train: Training set
        cfg: Width, learning rate, epochs, batch size and seed

    Returns:
        A ReluNet model

    Raises:
        NonFiniteLossError: If the loss becomes NaN or infinite
    """
    cfg.validate()
    X, y = _prepare(train)
    constant = _degenerate(ModelKind.RELU_NET, train, cfg)
    if constant is not None:
        return constant

    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = init_relu_params(X.shape[1], cfg.hidden_units, rng)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = relu_loss_and_grad(params, X[batch], y[batch])
            if not math.isfinite(loss):
                raise NonFiniteLossError(
                    f"Loss became {loss} at epoch {epoch + 1}; lower learning_rate (now {cfg.learning_rate})"
                )
            for key in params:
                params[key] = params[key] - cfg.learning_rate * grads[key]
        epoch_loss, _ = relu_loss_and_grad(params, X, y)
        if not math.isfinite(epoch_loss):
            raise NonFiniteLossError(f"Loss became {epoch_loss} after epoch {epoch + 1}")
        history.append(epoch_loss)
        logger.debug("relu net epoch %d loss %.6g", epoch + 1, epoch_loss)

    return PredictorModel(ModelKind.RELU_NET, params, config=asdict(cfg), history=history)


TRAINERS = {
    ModelKind.LINEAR_SVM: train_linear_svm,
    ModelKind.RBF_SVM: train_rbf_svm,
    ModelKind.RELU_NET: train_relu_net,
}


def make_config(kind: ModelKind, values: Optional[dict] = None, seed: Optional[int] = None) -> TrainerConfig:
    """Build a trainer config from a dict of overrides, ignoring keys the kind does not use."""
    cls = CONFIG_TYPES[kind]
    names = set(cls.__dataclass_fields__)
    cfg = cls(**{k: v for k, v in (values or {}).items() if k in names and v is not None})
    if seed is not None:
        cfg.seed = seed
    return cfg


def train(kind: ModelKind, train_set: LabeledDataset, cfg: Optional[TrainerConfig] = None) -> PredictorModel:
    """Train a model of ``kind`` with ``cfg`` (defaults when None)."""
    if cfg is None:
        cfg = CONFIG_TYPES[kind]()
    return TRAINERS[kind](train_set, cfg)


def accuracy(model: PredictorModel, ds: LabeledDataset) -> float:
    """Fraction of examples whose hard prediction equals the label."""
    if ds.n_examples == 0:
        return float("nan")
    return float((model.predict_batch(ds.features) == ds.labels).mean())


def spectral_norm(W: np.ndarray, tol: float = POWER_ITERATION_TOL,
                  max_iter: int = POWER_ITERATION_MAX_ITER, seed: int = 0) -> float:
    """
    Largest singular value by power iteration on W^T W.

    Starts from a seeded Gaussian vector and stops when successive estimates
    agree to relative tolerance ``tol`` or after ``max_iter`` iterations.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if not W.any():
        return 0.0
    v = np.random.default_rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for iteration in range(max_iter):
        u = W @ v
        u_norm = np.linalg.norm(u)
        if u_norm == 0.0:
            return 0.0
        u /= u_norm
        v_next = W.T @ u
        estimate = float(np.linalg.norm(v_next))
        v = v_next / estimate
        if abs(estimate - sigma) <= tol * estimate:
            logger.debug("power iteration converged after %d iterations", iteration + 1)
            return estimate
        sigma = estimate
    logger.debug("power iteration hit the %d iteration cap", max_iter)
    return sigma


def two_one_norm(W: np.ndarray) -> float:
    """||W^T||_{2,1}: the sum of the Euclidean norms of the rows of W."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    return float(np.linalg.norm(W, axis=1).sum())


@dataclass(frozen=True)
class WeightNorms:
    """Per-layer spectral norms s_i and (2,1) norms b_i, input layer first."""

    spectral: Tuple[float, ...]
    two_one: Tuple[float, ...]


def weight_norms(model: PredictorModel) -> WeightNorms:
    """
    Spectral and (2,1) norms of both layers of a ReLU network.

    Raises:
        ValidationError: If the model is not a ReluNet
    """
    if model.kind is not ModelKind.RELU_NET:
        raise ValidationError(f"weight_norms needs a ReluNet, got {model.kind.value}")
    layers = [model.params["W1"], model.params["W2"]]
    return WeightNorms(
        spectral=tuple(spectral_norm(W) for W in layers),
        two_one=tuple(two_one_norm(W) for W in layers),
    )

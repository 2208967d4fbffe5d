"""
Rademacher complexity of the kernel and ReLU hypothesis classes.

For the unit ball of an RKHS the supremum over hypotheses has a closed form,
sup_w sum_i sigma_i <w, phi(x_i)> = sqrt(sigma^T K sigma), so the empirical
complexity reduces to an expectation over sign vectors only. Small samples
enumerate every sign vector; larger ones use seeded Monte-Carlo blocks whose
seeds depend only on the block index, so estimates do not depend on how the
draws are partitioned.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from multical.models import LabeledDataset, MulticalError, ValidationError
from multical.seeding import mix64
from multical.trainers import ModelKind, PredictorModel, weight_norms

logger = logging.getLogger(__name__)

DEFAULT_DRAWS = 200
EXACT_MAX_N = 20
SYMMETRY_TOL = 1e-12
NEGATIVE_QUADRATIC_TOL = -1e-9
MC_BLOCK = 256
EXACT_CHUNK = 1 << 15


class NonPsdKernelError(MulticalError):
    """Raised when sigma^T K sigma is clearly negative, so K is not a kernel matrix."""

    code = "non_psd_kernel"


class InvalidRademacherParamsError(MulticalError):
    """Raised when complexity inputs are out of range."""

    code = "invalid_params"


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """
    A symmetric Gram matrix.

    Attributes:
        entries: N x N array
        B_sq: Largest diagonal entry
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ValidationError: If the matrix is not square, not symmetric, or has a negative diagonal
        """
        K = self.entries
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValidationError(f"Kernel matrix must be square, got shape {K.shape}")
        if not np.allclose(K, K.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise ValidationError("Kernel matrix is not symmetric")
        if (np.diag(K) < 0).any():
            raise ValidationError("Kernel matrix has a negative diagonal entry")

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @property
    def B_sq(self) -> float:
        return float(np.diag(self.entries).max()) if self.n else 0.0


@dataclass(frozen=True)
class RademacherEstimate:
    """Mean of (1/N) sqrt(sigma^T K sigma) over sign vectors, with its standard error."""

    mean: float
    std_error: float
    draws: int
    exact: bool = False

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "draws": self.draws, "exact": self.exact}


def build_rbf_kernel_matrix(ds: LabeledDataset, gamma: float) -> KernelMatrix:
    """
    K_ij = exp(-gamma |x_i - x_j|^2), with an exact unit diagonal.

    Raises:
        InvalidRademacherParamsError: If gamma <= 0
    """
    if not gamma > 0:
        raise InvalidRademacherParamsError(f"gamma must be positive, got {gamma}")
    K = np.exp(-gamma * cdist(ds.features, ds.features, "sqeuclidean"))
    np.fill_diagonal(K, 1.0)
    return KernelMatrix(K)


def _canonical_order(K: np.ndarray) -> np.ndarray:
    """Row order determined by each row's sorted values, so relabelled inputs give the same matrix."""
    row_keys = np.sort(K, axis=1)
    return np.lexsort(row_keys.T[::-1])


def _sup_values(K: np.ndarray, signs: np.ndarray) -> np.ndarray:
    quadratic = np.einsum("ij,ij->i", signs @ K, signs)
    if (quadratic < NEGATIVE_QUADRATIC_TOL).any():
        raise NonPsdKernelError(f"sigma^T K sigma = {quadratic.min()} < 0; the kernel matrix is not PSD")
    return np.sqrt(np.maximum(quadratic, 0.0)) / K.shape[0]


def _exact(K: np.ndarray) -> RademacherEstimate:
    n = K.shape[0]
    order = _canonical_order(K)
    K = K[np.ix_(order, order)]
    total = 2 ** n
    bits = np.arange(n, dtype=np.int64)
    values = []
    for start in range(0, total, EXACT_CHUNK):
        index = np.arange(start, min(start + EXACT_CHUNK, total), dtype=np.int64)
        signs = ((index[:, None] >> bits) & 1) * 2.0 - 1.0
        values.extend(_sup_values(K, signs).tolist())
    return RademacherEstimate(math.fsum(values) / total, 0.0, total, exact=True)


def _monte_carlo(K: np.ndarray, draws: int, seed: int) -> RademacherEstimate:
    n = K.shape[0]
    values = []
    for block, start in enumerate(range(0, draws, MC_BLOCK)):
        size = min(MC_BLOCK, draws - start)
        rng = np.random.default_rng(mix64(seed, block))
        signs = rng.choice((-1.0, 1.0), size=(size, n))
        values.append(_sup_values(K, signs))
    samples = np.concatenate(values)
    std_error = float(samples.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return RademacherEstimate(math.fsum(samples.tolist()) / draws, std_error, draws)


def kernel_rademacher_exact_sup(
    K: KernelMatrix, draws: int = DEFAULT_DRAWS, seed: int = 0, exact: Optional[bool] = None
) -> RademacherEstimate:
    """
    Empirical Rademacher complexity of the unit-ball kernel class.

    Args:
        K: Gram matrix of the sample
        draws: Monte-Carlo sign vectors (ignored in exact mode)
        seed: Root seed for sign vectors
        exact: Enumerate all 2^N sign vectors; defaults to N <= 20

    Returns:
        RademacherEstimate (std_error 0 in exact mode)

    Raises:
        InvalidRademacherParamsError: If draws < 1, or exact mode is forced above N = 20
        NonPsdKernelError: If some sigma^T K sigma < -1e-9
    """
    if draws < 1:
        raise InvalidRademacherParamsError(f"draws must be at least 1, got {draws}")
    n = K.n
    if n == 0:
        raise InvalidRademacherParamsError("Kernel matrix is empty")
    if exact is None:
        exact = n <= EXACT_MAX_N
    if exact and n > EXACT_MAX_N:
        raise InvalidRademacherParamsError(f"Exact enumeration is limited to N <= {EXACT_MAX_N}, got {n}")
    estimate = _exact(K.entries) if exact else _monte_carlo(K.entries, draws, seed)
    logger.info("Rademacher estimate N=%d exact=%s: %.6g +- %.2g", n, exact, estimate.mean, estimate.std_error)
    return estimate


def kernel_rademacher_closed_form_bound(B_sq: float, n: int) -> float:
    """
    sqrt(23 e B^2 / (22 n))

    Raises:
        InvalidRademacherParamsError: If n < 1 or B_sq < 0
    """
    if int(n) != n or n < 1:
        raise InvalidRademacherParamsError(f"n must be a positive integer, got {n}")
    if not B_sq >= 0:
        raise InvalidRademacherParamsError(f"B_sq must be non-negative, got {B_sq}")
    return math.sqrt(23.0 * math.e * B_sq / (22.0 * n))


def relu_rademacher_closed_form_bound(
    n: int, d_max: int, frobenius_X: float, spectral: Sequence[float], two_one: Sequence[float]
) -> float:
    """
    4 / n^(3/2) + (26 ln(n) ln(2 d_max) / n) ||X||_F (prod s_i) (sum (b_j/s_j)^(2/3))^(3/2)

    Raises:
        InvalidRademacherParamsError: If n < 2, d_max < 1, or a spectral norm is not positive
    """
    if int(n) != n or n < 2:
        raise InvalidRademacherParamsError(f"n must be an integer >= 2, got {n}")
    if int(d_max) != d_max or d_max < 1:
        raise InvalidRademacherParamsError(f"d_max must be an integer >= 1, got {d_max}")
    s = np.asarray(spectral, dtype=np.float64)
    b = np.asarray(two_one, dtype=np.float64)
    if s.size == 0 or s.shape != b.shape or (s <= 0).any() or (b < 0).any():
        raise InvalidRademacherParamsError("need equal-length spectral (> 0) and two_one (>= 0) norms")
    if not frobenius_X >= 0:
        raise InvalidRademacherParamsError(f"frobenius_X must be non-negative, got {frobenius_X}")
    norm_term = float(np.prod(s) * np.sum((b / s) ** (2.0 / 3.0)) ** 1.5)
    return 4.0 / n ** 1.5 + 26.0 * math.log(n) * math.log(2 * d_max) / n * frobenius_X * norm_term


def empirical_margin(model: PredictorModel, ds: LabeledDataset) -> float:
    """Smallest |raw score| over the dataset, used as the margin lambda of a trained model."""
    if ds.n_examples == 0:
        raise ValidationError("Dataset is empty")
    return float(np.abs(model.raw_scores(ds.features)).min())


@dataclass(frozen=True)
class ReluBoundInputs:
    """Data- and weight-dependent quantities entering the ReLU bounds."""

    n: int
    d_max: int
    frobenius_X: float
    spectral: tuple
    two_one: tuple

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d_max": self.d_max,
            "frobenius_X": self.frobenius_X,
            "spectral": list(self.spectral),
            "two_one": list(self.two_one),
        }


def relu_bound_inputs(model: PredictorModel, ds: LabeledDataset) -> ReluBoundInputs:
    """
    Collect (n, d_max, ||X||_F, s_i, b_i) for a trained ReLU network on a dataset.

    d_max is the widest layer (input, hidden or output).

    Raises:
        ValidationError: If the model is not a ReluNet
    """
    if model.kind is not ModelKind.RELU_NET:
        raise ValidationError(f"relu_bound_inputs needs a ReluNet, got {model.kind.value}")
    norms = weight_norms(model)
    W1 = model.params["W1"]
    return ReluBoundInputs(
        n=ds.n_examples,
        d_max=int(max(W1.shape[0], W1.shape[1], 1)),
        frobenius_X=float(np.linalg.norm(ds.features)),
        spectral=norms.spectral,
        two_one=norms.two_one,
    )

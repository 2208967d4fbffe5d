"""
Sample-complexity bounds for multicalibration uniform convergence.

Every bound takes the fairness parameters (epsilon, delta, gamma, psi, number
of groups |G|, number of labels |Y|) plus class-specific constants and returns
the number of samples after a single outermost ceiling. Logarithms are
natural. Bounds stated only up to a constant take ``leading_const``.

The reduction from ERM to multicalibration evaluates a group sample
complexity m at (psi * epsilon / 3, delta / (4 |G| |Y|)) and scales it by
2 / gamma. The caller supplies the worst-group m.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from multical.models import MulticalError

logger = logging.getLogger(__name__)

GroupSampleComplexity = Callable[[float, float], float]

# Comparison slack for the ratio-closeness hypotheses.
HYPOTHESIS_TOLERANCE = 1e-12

KERNEL_ERM_KERNEL_CONST = 23.0
KERNEL_ERM_CONFIDENCE_CONST = 64.0
RELU_ERM_CAPACITY_CONST = 7200.0
MC_KERNEL_CONST = 414.0
MC_RELU_CONST = 129600.0
MC_CONFIDENCE_CONST = 1152.0
OCCUPANCY_CONST = 8.0


class InvalidParamsError(MulticalError):
    """Raised when bound inputs are out of range."""

    code = "invalid_params"


class PreconditionViolatedError(MulticalError):
    """Raised when a lemma's precondition fails; ``value`` holds the failing quantity."""

    code = "precondition_violated"

    def __init__(self, message: str, value: float):
        super().__init__(message)
        self.value = value


def _open_unit(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise InvalidParamsError(f"{name} must lie in (0, 1), got {value}")


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise InvalidParamsError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class FairnessParams:
    """
    Accuracy and frequency parameters of a multicalibration guarantee.

    Attributes:
        epsilon: Calibration accuracy, in (0, 1)
        delta: Failure probability, in (0, 1)
        gamma: Minimum group frequency, in (0, 1]
        psi: Minimum prediction frequency within a group, in (0, 1]
        num_groups: |G| >= 1 (groups may overlap, so gamma <= 1/|G| is not required)
        num_labels: |Y| >= 2
    """

    epsilon: float
    delta: float
    gamma: float
    psi: float
    num_groups: int = 2
    num_labels: int = 2

    def validate(self) -> None:
        """
        Raises:
            InvalidParamsError: If any field is out of range
        """
        _open_unit("epsilon", self.epsilon)
        _open_unit("delta", self.delta)
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidParamsError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.psi <= 1.0:
            raise InvalidParamsError(f"psi must lie in (0, 1], got {self.psi}")
        if int(self.num_groups) != self.num_groups or self.num_groups < 1:
            raise InvalidParamsError(f"num_groups must be an integer >= 1, got {self.num_groups}")
        if int(self.num_labels) != self.num_labels or self.num_labels < 2:
            raise InvalidParamsError(f"num_labels must be an integer >= 2, got {self.num_labels}")

    @property
    def categories(self) -> int:
        return int(self.num_groups) * int(self.num_labels)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundResult:
    """
    A computed sample size.

    Attributes:
        samples: Ceiling of ``value``
        formula_id: Which bound produced it
        inputs: Echo of every input, including constants
        value: The bound before the ceiling
    """

    samples: int
    formula_id: str
    inputs: Dict[str, object] = field(default_factory=dict)
    value: float = 0.0

    def to_dict(self) -> dict:
        return {"formula_id": self.formula_id, "inputs": dict(self.inputs), "samples": self.samples}


def _ceil(value: float) -> int:
    if not math.isfinite(value) or value < 0:
        raise InvalidParamsError(f"Bound evaluated to {value}")
    return int(math.ceil(value))


def _result(formula_id: str, value: float, inputs: dict) -> BoundResult:
    result = BoundResult(_ceil(value), formula_id, inputs, value)
    logger.debug("%s -> %.6f (%d samples)", formula_id, value, result.samples)
    return result


# =============================================================================
# ERM-to-multicalibration reduction
# =============================================================================

def multicalibration_from_erm(
    m: GroupSampleComplexity, p: FairnessParams, inputs: Optional[dict] = None
) -> BoundResult:
    """
    Multicalibration sample complexity from a group ERM sample complexity.

    samples = ceil( (2 / gamma) * m(psi * epsilon / 3, delta / (4 |G| |Y|)) )

    Args:
        m: Worst-group sample complexity, returning a real before any ceiling
        p: Fairness parameters
        inputs: Extra class constants to echo in the result

    Raises:
        InvalidParamsError: If p is invalid or m returns a negative/non-finite value
    """
    p.validate()
    epsilon_erm = p.psi * p.epsilon / 3.0
    delta_erm = p.delta / (4.0 * p.categories)
    value = 2.0 / p.gamma * m(epsilon_erm, delta_erm)
    echo = {**p.to_dict(), **(inputs or {}), "epsilon_erm": epsilon_erm, "delta_erm": delta_erm}
    return _result("main", value, echo)


def vc_group_complexity(d_vc: int, leading_const: float = 1.0) -> GroupSampleComplexity:
    """Agnostic VC sample complexity c * (d + ln(1/delta)) / epsilon^2."""
    return lambda epsilon, delta: leading_const * (d_vc + math.log(1.0 / delta)) / epsilon ** 2


def kernel_group_complexity(B_sq: float, lambda_margin: float) -> GroupSampleComplexity:
    """Kernel SVM sample complexity before the ceiling."""
    scale = max(1.0, 1.0 / lambda_margin ** 2)

    def m(epsilon: float, delta: float) -> float:
        return (KERNEL_ERM_KERNEL_CONST * scale * B_sq
                + KERNEL_ERM_CONFIDENCE_CONST * math.log(4.0 / delta)) / epsilon ** 2
    return m


def relu_group_complexity(
    d_max: int, frobenius_X: float, spectral: Sequence[float], two_one: Sequence[float]
) -> GroupSampleComplexity:
    """Two-layer ReLU network sample complexity before the ceiling."""
    capacity = relu_capacity(d_max, frobenius_X, spectral, two_one)

    def m(epsilon: float, delta: float) -> float:
        return (RELU_ERM_CAPACITY_CONST * capacity ** 2
                + KERNEL_ERM_CONFIDENCE_CONST * math.log(4.0 / delta)) / epsilon ** 2
    return m


# =============================================================================
# Finite VC dimension
# =============================================================================

def linear_vc_dimension(dim: int) -> int:
    """VC dimension of affine halfspaces in ``dim`` dimensions."""
    return int(dim) + 1


def vc_multicalibration_bound(d_vc: int, p: FairnessParams, leading_const: float = 1.0) -> BoundResult:
    """
    samples = ceil( c * (d_vc + ln(|G| |Y| / delta)) / (epsilon^2 psi^2 gamma) )

    Raises:
        InvalidParamsError: If d_vc < 1, c <= 0 or p is invalid
    """
    p.validate()
    if int(d_vc) != d_vc or d_vc < 1:
        raise InvalidParamsError(f"d_vc must be an integer >= 1, got {d_vc}")
    _positive("leading_const", leading_const)
    value = leading_const * (d_vc + math.log(p.categories / p.delta)) / (p.epsilon ** 2 * p.psi ** 2 * p.gamma)
    return _result("vc", value, {**p.to_dict(), "d_vc": d_vc, "leading_const": leading_const})


# =============================================================================
# Rademacher bounds for kernel SVMs and ReLU networks
# =============================================================================

def _kernel_inputs(B_sq: float, lambda_margin: float) -> None:
    if not B_sq >= 0:
        raise InvalidParamsError(f"B_sq must be non-negative, got {B_sq}")
    _positive("lambda_margin", lambda_margin)


def kernel_erm_sample_complexity(B_sq: float, lambda_margin: float, epsilon: float, delta: float) -> int:
    """
    ceil( (23 max{1, 1/lambda^2} B^2 + 64 ln(4/delta)) / epsilon^2 )

    Raises:
        InvalidParamsError: If epsilon or delta leave (0, 1), B_sq < 0 or lambda <= 0
    """
    _open_unit("epsilon", epsilon)
    _open_unit("delta", delta)
    _kernel_inputs(B_sq, lambda_margin)
    return _ceil(kernel_group_complexity(B_sq, lambda_margin)(epsilon, delta))


def kernel_multicalibration_bound(B_sq: float, lambda_margin: float, p: FairnessParams) -> BoundResult:
    """
    ceil( (1152 ln(16 |G| |Y| / delta) + 414 max{1, 1/lambda^2} B^2) / (gamma epsilon^2 psi^2) )

    Raises:
        InvalidParamsError: If any input is out of range
    """
    p.validate()
    _kernel_inputs(B_sq, lambda_margin)
    scale = max(1.0, 1.0 / lambda_margin ** 2)
    numerator = MC_CONFIDENCE_CONST * math.log(16.0 * p.categories / p.delta) + MC_KERNEL_CONST * scale * B_sq
    value = numerator / (p.gamma * p.epsilon ** 2 * p.psi ** 2)
    return _result("kernel", value, {**p.to_dict(), "B_sq": B_sq, "lambda_margin": lambda_margin})


def relu_capacity(d_max: int, frobenius_X: float, spectral: Sequence[float], two_one: Sequence[float]) -> float:
    """
    ln(2 d_max) ||X||_F (prod s_i) (sum (b_j / s_j)^(2/3))^(3/2)

    Raises:
        InvalidParamsError: If the norm lists are empty, differ in length, or hold s_i <= 0
    """
    if int(d_max) != d_max or d_max < 1:
        raise InvalidParamsError(f"d_max must be an integer >= 1, got {d_max}")
    if not frobenius_X >= 0:
        raise InvalidParamsError(f"frobenius_X must be non-negative, got {frobenius_X}")
    s = np.asarray(spectral, dtype=np.float64)
    b = np.asarray(two_one, dtype=np.float64)
    if s.size == 0 or s.shape != b.shape:
        raise InvalidParamsError("spectral and two_one must be non-empty lists of equal length")
    if (s <= 0).any():
        raise InvalidParamsError(f"spectral norms must be positive, got {s.tolist()}")
    if (b < 0).any():
        raise InvalidParamsError(f"two_one norms must be non-negative, got {b.tolist()}")
    return float(math.log(2 * d_max) * frobenius_X * np.prod(s) * np.sum((b / s) ** (2.0 / 3.0)) ** 1.5)


def _unpack_norms(net_norms):
    if hasattr(net_norms, "spectral"):
        return list(net_norms.spectral), list(net_norms.two_one)
    spectral, two_one = net_norms
    return list(spectral), list(two_one)


def _checked_relu_capacity(d_max, frobenius_X, spectral, two_one) -> float:
    capacity = relu_capacity(d_max, frobenius_X, spectral, two_one)
    if capacity < 1.0:
        raise PreconditionViolatedError(
            f"ReLU bound needs ln(2 d_max) ||X||_F prod(s) (sum (b/s)^(2/3))^(3/2) >= 1, got {capacity}",
            capacity,
        )
    return capacity


def relu_erm_sample_complexity(
    d_max: int, frobenius_X: float, spectral: Sequence[float], two_one: Sequence[float],
    epsilon: float, delta: float,
) -> int:
    """
    ceil( (7200 ln^2(2 d_max) ||X||_F^2 (prod s_i)^2 (sum (b_j/s_j)^(2/3))^3 + 64 ln(4/delta)) / epsilon^2 )

    Raises:
        InvalidParamsError: If an input is out of range
        PreconditionViolatedError: If the capacity term is below 1
    """
    _open_unit("epsilon", epsilon)
    _open_unit("delta", delta)
    _checked_relu_capacity(d_max, frobenius_X, spectral, two_one)
    return _ceil(relu_group_complexity(d_max, frobenius_X, spectral, two_one)(epsilon, delta))


def relu_multicalibration_bound(net_norms, d_max: int, frobenius_X: float, p: FairnessParams) -> BoundResult:
    """
    ceil( (129600 C^2 + 1152 ln(16 |G| |Y| / delta)) / (gamma psi^2 epsilon^2) )

    where C is ``relu_capacity``. ``net_norms`` is a WeightNorms or a
    (spectral, two_one) pair.

    Raises:
        InvalidParamsError: If an input is out of range
        PreconditionViolatedError: If C is below 1
    """
    p.validate()
    spectral, two_one = _unpack_norms(net_norms)
    capacity = _checked_relu_capacity(d_max, frobenius_X, spectral, two_one)
    numerator = MC_RELU_CONST * capacity ** 2 + MC_CONFIDENCE_CONST * math.log(16.0 * p.categories / p.delta)
    value = numerator / (p.gamma * p.psi ** 2 * p.epsilon ** 2)
    return _result("relu", value, {
        **p.to_dict(),
        "d_max": d_max,
        "frobenius_X": frobenius_X,
        "spectral": [float(v) for v in spectral],
        "two_one": [float(v) for v in two_one],
    })


# =============================================================================
# Hard margin
# =============================================================================

def hard_margin_multicalibration_bound(
    diameter_D: float, margin_rho: float, p: FairnessParams, leading_const: float = 1.0
) -> BoundResult:
    """
    ceil( c * D^2 ln(4 |G| |Y| / delta) / (rho^2 gamma psi epsilon) )

    Epsilon enters to the first power here, unlike the other bounds.

    Raises:
        InvalidParamsError: If rho > D or any input is out of range
    """
    p.validate()
    _positive("diameter_D", diameter_D)
    _positive("margin_rho", margin_rho)
    _positive("leading_const", leading_const)
    if margin_rho > diameter_D:
        raise InvalidParamsError(f"margin_rho ({margin_rho}) cannot exceed diameter_D ({diameter_D})")
    value = (leading_const * diameter_D ** 2 * math.log(4.0 * p.categories / p.delta)
             / (margin_rho ** 2 * p.gamma * p.psi * p.epsilon))
    return _result("hard-margin", value, {
        **p.to_dict(), "diameter_D": diameter_D, "margin_rho": margin_rho, "leading_const": leading_const,
    })


# =============================================================================
# Generalization gap and the lemmas behind the main reduction
# =============================================================================

def two_sided_generalization_gap(
    rademacher: float, loss_bound_c: float, n: int, delta: float, empirical_form: bool
) -> float:
    """
    Uniform two-sided gap between empirical and true loss.

    empirical_form: 2 R + 4 c sqrt(2 ln(4/delta) / n)   (R from the sample)
    otherwise:      2 R + c sqrt(2 ln(2/delta) / n)     (R in expectation)

    Raises:
        InvalidParamsError: If an input is out of range
    """
    if not rademacher >= 0:
        raise InvalidParamsError(f"rademacher must be non-negative, got {rademacher}")
    _positive("loss_bound_c", loss_bound_c)
    if int(n) != n or n < 1:
        raise InvalidParamsError(f"n must be a positive integer, got {n}")
    _open_unit("delta", delta)
    if empirical_form:
        return 2.0 * rademacher + 4.0 * loss_bound_c * math.sqrt(2.0 * math.log(4.0 / delta) / n)
    return 2.0 * rademacher + loss_bound_c * math.sqrt(2.0 * math.log(2.0 / delta) / n)


class RatioCheck(Enum):
    """Outcome of checking the ratio-closeness lemma at one point."""
    HOLDS = "holds"
    FAILS = "fails"
    HYPOTHESES_NOT_MET = "hypotheses-not-met"


def ratio_closeness_holds(p1: float, p2: float, pt1: float, pt2: float, psi: float, epsilon: float) -> RatioCheck:
    """
    Check that close numerators and denominators give close ratios.

    Hypotheses: p1 <= p2, psi <= p2, |p1 - pt1| <= psi eps / 3, |p2 - pt2| <= psi eps / 3.
    Conclusion: |p1/p2 - pt1/pt2| <= eps.

    Returns:
        HOLDS or FAILS when the hypotheses hold, HYPOTHESES_NOT_MET otherwise

    Raises:
        InvalidParamsError: If an input leaves [0, 1]
    """
    for name, value in (("p1", p1), ("p2", p2), ("pt1", pt1), ("pt2", pt2), ("psi", psi), ("epsilon", epsilon)):
        if not 0.0 <= value <= 1.0:
            raise InvalidParamsError(f"{name} must lie in [0, 1], got {value}")
    slack = psi * epsilon / 3.0 + HYPOTHESIS_TOLERANCE
    if (p1 > p2 + HYPOTHESIS_TOLERANCE or psi > p2 + HYPOTHESIS_TOLERANCE
            or abs(p1 - pt1) > slack or abs(p2 - pt2) > slack or pt2 == 0.0 or p2 == 0.0):
        return RatioCheck.HYPOTHESES_NOT_MET
    gap = abs(p1 / p2 - pt1 / pt2)
    return RatioCheck.HOLDS if gap <= epsilon + HYPOTHESIS_TOLERANCE else RatioCheck.FAILS


def group_occupancy_threshold(num_groups: int, gamma: float, delta: float) -> int:
    """
    Sample size after which every group of frequency >= gamma has more than
    gamma N / 2 members with probability >= 1 - delta: ceil(8 ln(|G| / delta) / gamma).

    Raises:
        InvalidParamsError: If an input is out of range
    """
    if int(num_groups) != num_groups or num_groups < 1:
        raise InvalidParamsError(f"num_groups must be an integer >= 1, got {num_groups}")
    if not 0.0 < gamma <= 1.0:
        raise InvalidParamsError(f"gamma must lie in (0, 1], got {gamma}")
    _open_unit("delta", delta)
    return _ceil(OCCUPANCY_CONST * math.log(num_groups / delta) / gamma)


def simulate_group_occupancy(
    group_frequencies: Sequence[float], gamma: float, n: int, trials: int, seed: int = 0
) -> float:
    """
    Monte-Carlo frequency of "some group has at most gamma n / 2 members".

    Groups are disjoint with the given frequencies; any remaining mass goes to
    examples outside every group.

    Raises:
        InvalidParamsError: If the frequencies are negative or sum above 1
    """
    freqs = np.asarray(group_frequencies, dtype=np.float64)
    if (freqs < 0).any() or freqs.sum() > 1.0 + 1e-12:
        raise InvalidParamsError(f"group frequencies must be non-negative and sum to at most 1, got {freqs}")
    pvals = freqs if freqs.sum() >= 1.0 else np.append(freqs, 1.0 - freqs.sum())
    pvals = pvals / pvals.sum()
    counts = np.random.default_rng(seed).multinomial(n, pvals, size=trials)[:, :freqs.size]
    failures = (counts <= gamma * n / 2.0).any(axis=1)
    return float(failures.mean())

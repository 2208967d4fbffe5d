"""
Demographic-controlled train/test partitions.

For every ordered pair (z1, z2) drawn from the plan's count lists and every
repetition, z1 examples are sampled without replacement from group g1 and z2
from group g2. Examples exclusively in neither pool ("others", including
members of both groups) join training when the plan augments, otherwise the
test set. The test set is always the complement of the training set.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from multical.models import LabeledDataset, MulticalError, ValidationError
from multical.seeding import MASK64, mix64

logger = logging.getLogger(__name__)

DEFAULT_REPS = 25


class PoolTooSmallError(MulticalError):
    """Raised when a plan requests more examples than a group pool holds."""

    code = "pool_too_small"

    def __init__(self, group: str, requested: int, available: int):
        super().__init__(f"Group {group} has {available} drawable examples, plan requests {requested}")
        self.group = group
        self.requested = requested
        self.available = available


class InvalidWindowError(MulticalError):
    """Raised when a train-size window has min > max."""

    code = "invalid_window"


def _int_list(value: Union[str, Sequence[int]]) -> List[int]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return [int(v) for v in value]


@dataclass
class SplitPlan:
    """
    Parameters of a resampling sweep.

    Attributes:
        v1: Training counts drawn from group g1
        v2: Training counts drawn from group g2
        reps: Repetitions per (z1, z2) pair
        seed: Root seed (64-bit unsigned)
        augment_with_others: Put examples outside both pools into training
        train_size_window: Optional inclusive (min, max) on training-set size
    """

    v1: List[int]
    v2: List[int]
    reps: int = DEFAULT_REPS
    seed: int = 0
    augment_with_others: bool = False
    train_size_window: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        self.v1 = _int_list(self.v1)
        self.v2 = _int_list(self.v2)
        self.reps = int(self.reps)
        self.seed = int(self.seed)
        if self.train_size_window is not None:
            lo, hi = self.train_size_window
            self.train_size_window = (lo, hi)

    def validate(self) -> None:
        """
        Validate counts, repetitions, seed and window.

        Raises:
            ValidationError: If any field is out of range
            InvalidWindowError: If the window is inverted
        """
        if not self.v1 or not self.v2:
            raise ValidationError("v1 and v2 must each hold at least one count")
        if any(z < 1 for z in self.v1 + self.v2):
            raise ValidationError("counts in v1 and v2 must be positive")
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        if not 0 <= self.seed <= MASK64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.train_size_window is not None:
            validate_window(self.train_size_window)

    @property
    def n_splits(self) -> int:
        return len(self.v1) * len(self.v2) * self.reps

    def to_dict(self) -> dict:
        window = None
        if self.train_size_window is not None:
            window = [_json_bound(b) for b in self.train_size_window]
        return {
            "v1": list(self.v1),
            "v2": list(self.v2),
            "reps": self.reps,
            "seed": self.seed,
            "augment_with_others": self.augment_with_others,
            "train_size_window": window,
        }


def _json_bound(value: float):
    return None if math.isinf(value) else int(value)


@dataclass(frozen=True, eq=False)
class Split:
    """One train/test partition; index arrays are sorted."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    z1: int
    z2: int
    rep: int
    split_seed: int

    @property
    def train_size(self) -> int:
        return int(self.train_indices.shape[0])

    @property
    def test_size(self) -> int:
        return int(self.test_indices.shape[0])


@dataclass(frozen=True)
class GridCell:
    """Shape of the splits for one (z1, z2) pair, known without drawing."""

    z1: int
    z2: int
    train_size: int
    test_size: int


@dataclass(frozen=True, eq=False)
class _Pools:
    g1: np.ndarray
    g2: np.ndarray
    others: np.ndarray


def _pools(ds: LabeledDataset, g1: str, g2: str) -> _Pools:
    in1 = ds.group_mask(g1)
    in2 = ds.group_mask(g2)
    # Members of both groups are treated as others.
    return _Pools(
        g1=np.flatnonzero(in1 & ~in2),
        g2=np.flatnonzero(in2 & ~in1),
        others=np.flatnonzero(~(in1 ^ in2)),
    )


def _check(ds: LabeledDataset, g1: str, g2: str, plan: SplitPlan) -> _Pools:
    plan.validate()
    if g1 == g2:
        raise ValidationError(f"g1 and g2 must differ, got {g1!r} twice")
    pools = _pools(ds, g1, g2)
    for group, pool, counts in ((g1, pools.g1, plan.v1), (g2, pools.g2, plan.v2)):
        if max(counts) > len(pool):
            raise PoolTooSmallError(group, max(counts), len(pool))
    return pools


def split_seed(seed: int, z1: int, z2: int, rep: int) -> int:
    """Seed of one split; a pure function of its coordinates."""
    return mix64(seed, z1, z2, rep)


def split_grid(ds: LabeledDataset, g1: str, g2: str, plan: SplitPlan) -> List[GridCell]:
    """
    The (z1, z2) grid with train and test sizes, computed without drawing.

    Raises:
        PoolTooSmallError: If a count exceeds its pool
    """
    pools = _check(ds, g1, g2, plan)
    n_others = len(pools.others) if plan.augment_with_others else 0
    cells = []
    for z1 in plan.v1:
        for z2 in plan.v2:
            train_size = z1 + z2 + n_others
            cells.append(GridCell(z1, z2, train_size, ds.n_examples - train_size))
    return cells


def enumerate_splits(ds: LabeledDataset, g1: str, g2: str, plan: SplitPlan) -> Iterator[Split]:
    """
    Lazily yield every split of the plan.

    Yields len(v1) * len(v2) * reps splits ordered by (z1, z2, rep). Each
    split's draw uses only its own seed, so any subset of splits can be
    regenerated independently.

    Raises:
        ValidationError: If the plan is invalid or g1 == g2
        PoolTooSmallError: If a count exceeds its pool (checked before yielding)
    """
    pools = _check(ds, g1, g2, plan)
    logger.info(
        "Enumerating %d splits: |%s|=%d, |%s|=%d, others=%d",
        plan.n_splits, g1, len(pools.g1), g2, len(pools.g2), len(pools.others),
    )
    return _generate(ds.n_examples, pools, plan)


def _generate(n: int, pools: _Pools, plan: SplitPlan) -> Iterator[Split]:
    everything = np.arange(n)
    for z1 in plan.v1:
        for z2 in plan.v2:
            for rep in range(plan.reps):
                seed = split_seed(plan.seed, z1, z2, rep)
                rng = np.random.default_rng(seed)
                drawn = [
                    rng.choice(pools.g1, size=z1, replace=False),
                    rng.choice(pools.g2, size=z2, replace=False),
                ]
                if plan.augment_with_others:
                    drawn.append(pools.others)
                train = np.sort(np.concatenate(drawn))
                test = np.setdiff1d(everything, train, assume_unique=True)
                for array in (train, test):
                    array.setflags(write=False)
                yield Split(train, test, z1, z2, rep, seed)


def validate_window(window: Tuple[float, float]) -> None:
    """
    Raises:
        InvalidWindowError: If min > max
    """
    lo, hi = window
    if lo > hi:
        raise InvalidWindowError(f"Invalid train-size window: min {lo} > max {hi}")


def filter_by_train_size(splits: Iterable[Split], window: Tuple[float, float]) -> Iterator[Split]:
    """
    Keep splits whose training size lies in the inclusive window.

    The window is checked immediately; filtering stays lazy.

    Raises:
        InvalidWindowError: If min > max
    """
    validate_window(window)
    lo, hi = window
    return (s for s in splits if lo <= s.train_size <= hi)

"""
Core data structures for labeled datasets with protected groups.

This module contains Example, LabeledDataset, GroupSpec and FeatureSchema,
plus the exception hierarchy shared by the rest of the package.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np


LABEL_SPACE: Tuple[int, int] = (0, 1)


class MulticalError(Exception):
    """Base class for every domain error raised by multical."""

    code = "error"


class ValidationError(MulticalError):
    """Raised when a domain object fails validation."""

    code = "validation_error"


class UnknownGroupError(MulticalError):
    """Raised when a group identifier is not declared by the dataset."""

    code = "unknown_group"

    def __init__(self, group: str):
        super().__init__(f"Unknown group: {group}")
        self.group = group


@dataclass(frozen=True)
class Example:
    """
    A single labeled example.

    Attributes:
        features: Real-valued feature vector
        label: Binary label in {0, 1}
        group_ids: Groups the example belongs to (possibly none, possibly several)
    """

    features: Tuple[float, ...]
    label: int
    group_ids: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        object.__setattr__(self, "group_ids", frozenset(self.group_ids))
        if self.label not in LABEL_SPACE:
            raise ValidationError(f"Invalid label: {self.label!r} (expected 0 or 1)")


@dataclass(frozen=True)
class ColumnEncoding:
    """How one raw CSV column maps onto feature columns."""

    name: str
    levels: Optional[Tuple[str, ...]] = None

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None

    def feature_names(self) -> List[str]:
        if self.levels is None:
            return [self.name]
        return [f"{self.name}={level}" for level in self.levels]


@dataclass(frozen=True)
class FeatureSchema:
    """
    Frozen encoding decisions for a set of raw columns.

    Numeric columns pass through; categorical columns expand into one
    indicator per sorted level. Encoding a held-out file with the same schema
    keeps feature positions stable.
    """

    columns: Tuple[ColumnEncoding, ...]

    def feature_names(self) -> List[str]:
        names: List[str] = []
        for column in self.columns:
            names.extend(column.feature_names())
        return names

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": c.name, "levels": None if c.levels is None else list(c.levels)}
                for c in self.columns
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        columns = []
        for item in data["columns"]:
            levels = item.get("levels")
            columns.append(ColumnEncoding(item["name"], None if levels is None else tuple(levels)))
        return cls(tuple(columns))


@dataclass
class GroupSpec:
    """
    Describes how the protected column drives group membership.

    Attributes:
        protected_column: Column withheld from features
        group_values: Values of the protected column that define groups
        augment_with_others: Whether examples outside both split groups join training
    """

    protected_column: str
    group_values: List[str]
    augment_with_others: bool = False

    def __post_init__(self):
        self.protected_column = self.protected_column.strip()
        if isinstance(self.group_values, str):
            self.group_values = self.group_values.split(",")
        self.group_values = [str(v).strip() for v in self.group_values]
        if isinstance(self.augment_with_others, str):
            self.augment_with_others = self.augment_with_others.strip().lower() in ("true", "1", "yes")

    def validate(self) -> None:
        """
        Validate the spec.

        Raises:
            ValidationError: If the column is blank or group values are empty or repeated
        """
        if not self.protected_column:
            raise ValidationError("protected_column cannot be empty")
        if not self.group_values or any(not v for v in self.group_values):
            raise ValidationError("group_values must contain at least one non-empty value")
        if len(set(self.group_values)) != len(self.group_values):
            raise ValidationError(f"group_values must be distinct: {self.group_values}")


@dataclass(eq=False)
class LabeledDataset:
    """
    An immutable table of examples with binary labels and group memberships.

    Features, labels and memberships are held as read-only numpy arrays so the
    dataset can be shared by parallel workers. ``membership[i, j]`` is True when
    example ``i`` belongs to ``groups[j]``.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: Tuple[str, ...]
    membership: np.ndarray
    feature_names: Tuple[str, ...] = ()
    schema: Optional[FeatureSchema] = None
    _group_index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(-1, 1) if features.size else features.reshape(0, 0)
        self.features = features
        self.labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        self.groups = tuple(str(g) for g in self.groups)
        self.membership = np.array(self.membership, dtype=bool).reshape(len(self.labels), len(self.groups))
        if not self.feature_names:
            self.feature_names = tuple(f"x{j}" for j in range(self.features.shape[1]))
        self.feature_names = tuple(self.feature_names)
        for array in (self.features, self.labels, self.membership):
            array.setflags(write=False)
        self._group_index = {g: j for j, g in enumerate(self.groups)}
        self.validate()

    def validate(self) -> None:
        """
        Validate shapes and label values.

        Raises:
            ValidationError: If any invariant is broken
        """
        n = len(self.labels)
        if self.features.shape[0] != n:
            raise ValidationError(f"features have {self.features.shape[0]} rows but there are {n} labels")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValidationError("feature_names length does not match feature dimension")
        if n and not np.isin(self.labels, LABEL_SPACE).all():
            raise ValidationError("labels must be 0 or 1")
        if len(set(self.groups)) != len(self.groups):
            raise ValidationError(f"groups must be distinct: {self.groups}")
        if not np.isfinite(self.features).all():
            raise ValidationError("features must be finite")

    @classmethod
    def from_examples(
        cls,
        examples: Sequence[Example],
        groups: Iterable[str],
        feature_names: Sequence[str] = (),
    ) -> "LabeledDataset":
        """
        Build a dataset from Example objects.

        Raises:
            ValidationError: If dimensions differ or an example names an undeclared group
        """
        groups = tuple(groups)
        declared = set(groups)
        dims = {len(e.features) for e in examples}
        if len(dims) > 1:
            raise ValidationError(f"examples have inconsistent dimensions: {sorted(dims)}")
        dim = dims.pop() if dims else len(feature_names)
        features = np.array([e.features for e in examples], dtype=np.float64).reshape(len(examples), dim)
        membership = np.zeros((len(examples), len(groups)), dtype=bool)
        for i, example in enumerate(examples):
            unknown = example.group_ids - declared
            if unknown:
                raise ValidationError(f"example {i} references undeclared groups {sorted(unknown)}")
            for j, g in enumerate(groups):
                membership[i, j] = g in example.group_ids
        return cls(
            features=features,
            labels=[e.label for e in examples],
            groups=groups,
            membership=membership,
            feature_names=tuple(feature_names),
        )

    @property
    def n_examples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def label_space(self) -> Tuple[int, int]:
        return LABEL_SPACE

    @property
    def examples(self) -> List[Example]:
        return [self.example(i) for i in range(self.n_examples)]

    def example(self, i: int) -> Example:
        group_ids = frozenset(g for j, g in enumerate(self.groups) if self.membership[i, j])
        return Example(tuple(self.features[i].tolist()), int(self.labels[i]), group_ids)

    def group_mask(self, group: str) -> np.ndarray:
        """
        Boolean membership column for one group.

        Raises:
            UnknownGroupError: If the group is not declared
        """
        if group not in self._group_index:
            raise UnknownGroupError(group)
        return self.membership[:, self._group_index[group]]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        """Return the examples at ``indices`` as a new dataset with the same groups and schema."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            features=self.features[idx],
            labels=self.labels[idx],
            groups=self.groups,
            membership=self.membership[idx],
            feature_names=self.feature_names,
            schema=self.schema,
        )

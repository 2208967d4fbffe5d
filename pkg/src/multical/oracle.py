"""
Finite discrete distributions with exactly computable calibration error.

A distribution is a list of atoms (x, groups, P[y=1 | x], mass). Because the
support is finite, the true calibration error of a hard predictor is a
weighted average over atoms and needs no estimation.

Atom tables are plain text, one atom per line::

    # features | groups | p_y1 | mass
    0.0 | A | 0.8 | 0.5
    1.0 | B | 0.3 | 0.5

Features and groups are comma-separated; the groups field may be empty. An
optional ``groups: A,B,C`` line declares the group list (and its order)
explicitly, otherwise groups are declared in order of first appearance.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from multical.calibration import Category, empirical_calibration_error
from multical.models import LabeledDataset, MulticalError, ValidationError
from multical.storage import StorageError, atomic_write_text
from multical.trainers import PredictorModel

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-12
FIELD_SEPARATOR = "|"
GROUPS_DIRECTIVE = "groups:"


@dataclass(frozen=True)
class Atom:
    """One support point of a DiscreteDistribution."""

    features: Tuple[float, ...]
    group_ids: FrozenSet[str]
    p_y1: float
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        object.__setattr__(self, "group_ids", frozenset(str(g) for g in self.group_ids))
        object.__setattr__(self, "p_y1", float(self.p_y1))
        object.__setattr__(self, "mass", float(self.mass))


@dataclass
class DiscreteDistribution:
    """
    A finite-support distribution over (x, y) with group memberships.

    Attributes:
        atoms: Support points; masses sum to 1
        groups: Declared groups, in order
    """

    atoms: List[Atom]
    groups: Tuple[str, ...] = ()
    _features: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.atoms = [a if isinstance(a, Atom) else Atom(*a) for a in self.atoms]
        if not self.groups:
            seen: List[str] = []
            for atom in self.atoms:
                seen.extend(sorted(g for g in atom.group_ids if g not in seen))
            self.groups = tuple(seen)
        self.groups = tuple(self.groups)
        self.validate()
        self._features = np.array([a.features for a in self.atoms], dtype=np.float64)
        self._features.setflags(write=False)

    def validate(self) -> None:
        """
        Raises:
            ValidationError: If masses do not sum to 1, a probability is out of
                range, dimensions differ, or an atom names an undeclared group
        """
        if not self.atoms:
            raise ValidationError("Distribution needs at least one atom")
        dims = {len(a.features) for a in self.atoms}
        if len(dims) != 1:
            raise ValidationError(f"Atoms have inconsistent dimensions: {sorted(dims)}")
        declared = set(self.groups)
        if len(declared) != len(self.groups):
            raise ValidationError(f"groups must be distinct: {self.groups}")
        for i, atom in enumerate(self.atoms):
            if not atom.mass > 0:
                raise ValidationError(f"Atom {i} has non-positive mass {atom.mass}")
            if not 0.0 <= atom.p_y1 <= 1.0:
                raise ValidationError(f"Atom {i} has p_y1 {atom.p_y1} outside [0, 1]")
            unknown = atom.group_ids - declared
            if unknown:
                raise ValidationError(f"Atom {i} references undeclared groups {sorted(unknown)}")
        total = math.fsum(a.mass for a in self.atoms)
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ValidationError(f"Atom masses sum to {total!r}, expected 1")

    @property
    def dim(self) -> int:
        return len(self.atoms[0].features)

    @property
    def features(self) -> np.ndarray:
        return self._features

    def group_mass(self, group: str) -> float:
        return math.fsum(a.mass for a in self.atoms if group in a.group_ids)


def true_calibration_error(dist: DiscreteDistribution, model: PredictorModel, cat: Category) -> Optional[float]:
    """
    ŷ - E[y | x in g, h(x) = ŷ] by enumeration over atoms.

    Returns None when the conditioning event has zero mass.
    """
    predictions = model.predict_batch(dist.features)
    masses = []
    label_masses = []
    for atom, prediction in zip(dist.atoms, predictions):
        if cat.group in atom.group_ids and prediction == cat.predicted_label:
            masses.append(atom.mass)
            label_masses.append(atom.mass * atom.p_y1)
    if not masses:
        return None
    return cat.predicted_label - math.fsum(label_masses) / math.fsum(masses)


def sample(dist: DiscreteDistribution, n: int, seed: int) -> LabeledDataset:
    """
    Draw ``n`` i.i.d. examples: atoms by mass, labels Bernoulli(p_y1).

    Raises:
        ValidationError: If n < 1
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n}")
    rng = np.random.default_rng(seed)
    masses = np.array([a.mass for a in dist.atoms])
    picks = rng.choice(len(dist.atoms), size=int(n), p=masses / masses.sum())
    p_y1 = np.array([a.p_y1 for a in dist.atoms])
    labels = (rng.random(int(n)) < p_y1[picks]).astype(np.int64)
    membership = np.array(
        [[g in atom.group_ids for g in dist.groups] for atom in dist.atoms], dtype=bool
    ).reshape(len(dist.atoms), len(dist.groups))
    return LabeledDataset(
        features=dist.features[picks],
        labels=labels,
        groups=dist.groups,
        membership=membership[picks],
    )


def convergence_gap(
    dist: DiscreteDistribution, model: PredictorModel, cat: Category, n: int, seed: int
) -> Optional[float]:
    """|true - empirical| calibration error on a fresh sample of size ``n``; None if either is undefined."""
    true_error = true_calibration_error(dist, model, cat)
    empirical = empirical_calibration_error(model, sample(dist, n, seed), cat)
    if true_error is None or empirical is None:
        return None
    return abs(true_error - empirical)


class AtomTableError(MulticalError):
    """Raised for malformed atom-table files."""

    code = "invalid_atom_table"

    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


def _comma_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def parse_atom_table(text: str, source: Union[str, Path] = "<string>") -> DiscreteDistribution:
    """
    Parse atom-table text.

    Raises:
        AtomTableError: If a line does not have four fields or holds a bad number
        ValidationError: If the resulting distribution is invalid
    """
    atoms = []
    groups: Tuple[str, ...] = ()
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith(GROUPS_DIRECTIVE):
            groups = tuple(_comma_list(line[len(GROUPS_DIRECTIVE):]))
            continue
        fields = [f.strip() for f in line.split(FIELD_SEPARATOR)]
        if len(fields) != 4:
            raise AtomTableError(source, line_number, f"expected 4 '|'-separated fields, got {len(fields)}")
        try:
            features = tuple(float(v) for v in _comma_list(fields[0]))
            p_y1 = float(fields[2])
            mass = float(fields[3])
        except ValueError as e:
            raise AtomTableError(source, line_number, str(e))
        atoms.append(Atom(features, frozenset(_comma_list(fields[1])), p_y1, mass))
    return DiscreteDistribution(atoms, groups)


def load_atom_table(path: Union[str, Path]) -> DiscreteDistribution:
    """
    Raises:
        StorageError: If the file cannot be read
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(f"Failed to load {path}: {e}")
    dist = parse_atom_table(text, path)
    logger.info("Loaded %d atoms over groups %s from %s", len(dist.atoms), list(dist.groups), path)
    return dist


def format_atom_table(dist: DiscreteDistribution) -> str:
    lines = ["# features | groups | p_y1 | mass", f"{GROUPS_DIRECTIVE} {','.join(dist.groups)}"]
    for atom in dist.atoms:
        features = ",".join(repr(v) for v in atom.features)
        groups = ",".join(g for g in dist.groups if g in atom.group_ids)
        lines.append(f"{features} | {groups} | {atom.p_y1!r} | {atom.mass!r}")
    return "\n".join(lines) + "\n"


def save_atom_table(dist: DiscreteDistribution, path: Union[str, Path]) -> None:
    atomic_write_text(path, format_atom_table(dist))


def two_atom_distribution() -> DiscreteDistribution:
    """x=0 in group A with P[y=1]=0.8, x=1 in group B with P[y=1]=0.3, equal mass."""
    return DiscreteDistribution(
        [Atom((0.0,), frozenset({"A"}), 0.8, 0.5), Atom((1.0,), frozenset({"B"}), 0.3, 0.5)],
        ("A", "B"),
    )


def true_category_errors(dist: DiscreteDistribution, model: PredictorModel) -> List[Tuple[Category, Optional[float]]]:
    """True calibration error for every declared group and label, groups in declared order."""
    return [
        (Category(g, label), true_calibration_error(dist, model, Category(g, label)))
        for g in dist.groups
        for label in (0, 1)
    ]


def gap_quantile(gaps: Sequence[Optional[float]], q: float) -> Optional[float]:
    """Nearest-rank quantile of the defined gaps."""
    values = sorted(g for g in gaps if g is not None)
    if not values:
        return None
    rank = max(1, math.ceil(q * len(values)))
    return values[rank - 1]

"""
Dataset preparation presets.

Each preset fills the sweep settings used to study one protected attribute
of a public dataset: which columns are features, how the label is derived,
which two groups are split, the training counts drawn from each group, the
train-size window kept for plotting, and which predictor classes are
trained. Presets sit below config files and flags in precedence, so any
value can still be overridden.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from multical.models import ValidationError

ADULT_FEATURES = [
    "age",
    "workclass",
    "fnlwgt",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
]
COMPAS_FEATURES = [
    "age",
    "juv_fel_count",
    "juv_misd_count",
    "priors_count",
    "c_charge_desc",
    "c_charge_degree",
]
CELEBA_EMBEDDING_DIM = 2048
CELEBA_FEATURES = [f"emb{i}" for i in range(CELEBA_EMBEDDING_DIM)]

ALL_KINDS = ["LinearSVM", "RbfSVM", "ReluNet"]
HIDDEN_UNITS = 1000


def _doubling(start: int, steps: int) -> List[int]:
    return [start * 2 ** i for i in range(steps)]


@dataclass(frozen=True)
class Preset:
    """Sweep settings for one dataset and protected attribute."""

    name: str
    label_column: str
    positive_label: str
    negative_label: str
    protected_column: str
    g1: str
    g2: str
    features: List[str]
    counts: List[int]
    train_size_window: Tuple[int, int]
    augment_with_others: bool = False
    model_kinds: List[str] = field(default_factory=lambda: list(ALL_KINDS))

    def settings(self) -> Dict[str, object]:
        """Values keyed like the sweep options."""
        return {
            "dataset_id": self.name,
            "label_column": self.label_column,
            "positive_label": self.positive_label,
            "negative_label": self.negative_label,
            "protected_column": self.protected_column,
            "g1": self.g1,
            "g2": self.g2,
            "feature_columns": ",".join(self.features),
            "v1": ",".join(str(c) for c in self.counts),
            "v2": ",".join(str(c) for c in self.counts),
            "train_size_min": self.train_size_window[0],
            "train_size_max": self.train_size_window[1],
            "augment_with_others": self.augment_with_others,
            "models": ",".join(self.model_kinds),
            "hidden_units": HIDDEN_UNITS,
        }


_ADULT = dict(
    label_column="income",
    positive_label=">50K,>50K.",
    negative_label="<=50K,<=50K.",
    features=ADULT_FEATURES,
)
_COMPAS = dict(
    label_column="two_year_recid",
    positive_label="1",
    negative_label="0",
    features=COMPAS_FEATURES,
)

PRESETS: Dict[str, Preset] = {
    preset.name: preset
    for preset in (
        Preset(
            name="adult",
            protected_column="sex",
            g1="Male",
            g2="Female",
            counts=_doubling(200, 7),
            train_size_window=(4500, 9000),
            **_ADULT,
        ),
        # Race groups are dominated by Black and White; other races join training.
        Preset(
            name="adult-race",
            protected_column="race",
            g1="Black",
            g2="White",
            counts=_doubling(20, 8),
            train_size_window=(2500, 5000),
            augment_with_others=True,
            **_ADULT,
        ),
        Preset(
            name="compas",
            protected_column="sex",
            g1="Male",
            g2="Female",
            counts=_doubling(20, 7),
            train_size_window=(800, 1600),
            **_COMPAS,
        ),
        Preset(
            name="compas-race",
            protected_column="race",
            g1="African-American",
            g2="Caucasian",
            counts=_doubling(20, 7),
            train_size_window=(800, 1600),
            augment_with_others=True,
            **_COMPAS,
        ),
        Preset(
            name="celeba",
            label_column="Smiling",
            positive_label="1",
            negative_label="-1,0",
            protected_column="Male",
            g1="1",
            g2="-1",
            features=CELEBA_FEATURES,
            counts=_doubling(200, 9),
            train_size_window=(27000, 54000),
            model_kinds=["LinearSVM", "ReluNet"],
        ),
    )
}


def get_preset(name: Optional[str]) -> Dict[str, object]:
    """
    Settings of a named preset; an empty dict for None.

    Raises:
        ValidationError: If the preset is unknown
    """
    if not name:
        return {}
    try:
        return PRESETS[name.strip().lower()].settings()
    except KeyError:
        raise ValidationError(f"Unknown preset: {name} (choose from {', '.join(sorted(PRESETS))})")

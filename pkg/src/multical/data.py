"""
CSV ingestion and group statistics for labeled datasets.

Categorical columns (any column with a non-numeric cell) are one-hot encoded
over their sorted observed levels; numeric columns pass through unchanged.
The protected column never becomes a feature; its value selects the groups.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from multical.models import (
    ColumnEncoding,
    FeatureSchema,
    GroupSpec,
    LabeledDataset,
    MulticalError,
    UnknownGroupError,
)
from multical.storage import atomic_write_text

logger = logging.getLogger(__name__)

# Separator for several group values in one protected cell.
GROUP_SEPARATOR = "|"


class MissingColumnError(MulticalError):
    """Raised when a required column is absent from the CSV header."""

    code = "missing_column"

    def __init__(self, column: str):
        super().__init__(f"Missing column: {column}")
        self.column = column


class UnparseableCellError(MulticalError):
    """Raised when a cell is empty or cannot be interpreted."""

    code = "unparseable_cell"

    def __init__(self, row: int, column: str, value: str = ""):
        super().__init__(f"Unparseable cell at row {row}, column {column}: {value!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyDatasetError(MulticalError):
    """Raised when a CSV holds no data rows."""

    code = "empty_dataset"


def _split_values(value: Union[str, Sequence[str], None]) -> List[str]:
    if value is None:
        return []
    if isinstance(value, str):
        value = value.split(",")
    return [str(v).strip() for v in value if str(v).strip()]


def _is_numeric(series: pd.Series) -> bool:
    return bool(pd.to_numeric(series, errors="coerce").notna().all())


def infer_schema(frame: pd.DataFrame, feature_columns: Sequence[str]) -> FeatureSchema:
    """
    Decide numeric vs categorical for each feature column.

    A column is categorical when any of its cells fails to parse as a real;
    its levels are the sorted distinct strings.
    """
    columns = []
    for name in feature_columns:
        series = frame[name]
        if _is_numeric(series):
            columns.append(ColumnEncoding(name))
        else:
            columns.append(ColumnEncoding(name, tuple(sorted(series.unique()))))
    return FeatureSchema(tuple(columns))


def encode_features(frame: pd.DataFrame, schema: FeatureSchema) -> np.ndarray:
    """
    Encode raw string cells with a frozen schema.

    Levels missing from the schema map to an all-zero block.

    Raises:
        UnparseableCellError: If a numeric column holds a non-numeric or non-finite cell
    """
    blocks = []
    for column in schema.columns:
        series = frame[column.name]
        if column.levels is None:
            values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=np.float64)
            bad = ~np.isfinite(values)
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise UnparseableCellError(row, column.name, str(series.iloc[row]))
            blocks.append(values.reshape(-1, 1))
        else:
            cat = pd.Categorical(series, categories=list(column.levels))
            block = np.zeros((len(series), len(column.levels)), dtype=np.float64)
            codes = np.asarray(cat.codes)
            known = codes >= 0
            block[np.flatnonzero(known), codes[known]] = 1.0
            unknown = int((~known).sum())
            if unknown:
                logger.warning("%d cells of %s hold levels unseen by the schema", unknown, column.name)
            blocks.append(block)
    if not blocks:
        return np.zeros((len(frame), 0), dtype=np.float64)
    return np.hstack(blocks)


def ingest_csv(
    path: Union[str, Path],
    label_column: str,
    positive_label: Union[str, Sequence[str]],
    group_spec: GroupSpec,
    feature_columns: Sequence[str],
    negative_label: Union[str, Sequence[str], None] = None,
    schema: Optional[FeatureSchema] = None,
) -> LabeledDataset:
    """
    Load a CSV file into a LabeledDataset.

    Args:
        path: CSV file with a header row
        label_column: Column holding the label
        positive_label: Value(s) mapped to label 1 (comma-separated string or list)
        group_spec: Protected column and the values that define groups
        feature_columns: Columns used as features, in order; every column except
            the label and protected column when empty
        negative_label: Value(s) mapped to label 0; when given, any other value is rejected
        schema: Encoding to reuse (e.g. the training file's); inferred when None

    Returns:
        The encoded dataset

    Raises:
        MissingColumnError: If a named column is absent
        UnparseableCellError: If a cell is empty, or a label is undeclared
        EmptyDatasetError: If the file has no data rows
    """
    group_spec.validate()
    feature_columns = _split_values(feature_columns)
    positives = set(_split_values(positive_label))
    negatives = set(_split_values(negative_label))

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"No data in {path}")
    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.empty:
        raise EmptyDatasetError(f"No data rows in {path}")

    if not feature_columns:
        feature_columns = [c for c in frame.columns if c not in (label_column, group_spec.protected_column)]

    for name in [label_column, group_spec.protected_column, *feature_columns]:
        if name not in frame.columns:
            raise MissingColumnError(name)
    if group_spec.protected_column in feature_columns:
        raise MulticalError(f"Protected column {group_spec.protected_column} cannot be a feature")

    frame = frame.apply(lambda s: s.str.strip())
    for name in [label_column, *feature_columns]:
        empty = (frame[name] == "").to_numpy()
        if empty.any():
            raise UnparseableCellError(int(np.flatnonzero(empty)[0]), name)

    raw_labels = frame[label_column]
    if negatives:
        undeclared = ~raw_labels.isin(positives | negatives).to_numpy()
        if undeclared.any():
            row = int(np.flatnonzero(undeclared)[0])
            raise UnparseableCellError(row, label_column, raw_labels.iloc[row])
    labels = raw_labels.isin(positives).to_numpy().astype(np.int64)

    if schema is None:
        schema = infer_schema(frame, feature_columns)
    features = encode_features(frame, schema)

    groups = tuple(group_spec.group_values)
    cells = frame[group_spec.protected_column].str.split(GROUP_SEPARATOR, regex=False)
    membership = np.zeros((len(frame), len(groups)), dtype=bool)
    for j, g in enumerate(groups):
        membership[:, j] = cells.apply(lambda parts, g=g: g in [p.strip() for p in parts]).to_numpy()

    dataset = LabeledDataset(
        features=features,
        labels=labels,
        groups=groups,
        membership=membership,
        feature_names=tuple(schema.feature_names()),
        schema=schema,
    )
    categorical = [c.name for c in schema.columns if c.is_categorical]
    logger.info(
        "Ingested %d examples from %s: d=%d, categorical=%s, groups=%s",
        dataset.n_examples, path, dataset.dim, categorical, group_counts(dataset),
    )
    return dataset


def group_counts(ds: LabeledDataset) -> Dict[str, int]:
    """Number of examples in each declared group (overlapping groups count in each)."""
    counts = ds.membership.sum(axis=0)
    return {g: int(counts[j]) for j, g in enumerate(ds.groups)}


def empirical_group_frequency(ds: LabeledDataset, g: str) -> float:
    """
    Fraction of examples belonging to group ``g``.

    Raises:
        UnknownGroupError: If ``g`` is not declared
        EmptyDatasetError: If the dataset has no examples
    """
    if g not in ds.groups:
        raise UnknownGroupError(g)
    if ds.n_examples == 0:
        raise EmptyDatasetError("Group frequency is undefined on an empty dataset")
    return int(ds.group_mask(g).sum()) / ds.n_examples


def write_dataset_csv(ds: LabeledDataset, path: Union[str, Path]) -> None:
    """
    Write a dataset in a form ``ingest_csv`` reads back unchanged.

    Columns are the feature names, ``label`` (0/1) and ``group`` (group ids
    joined by ``|``). Re-ingest with label_column="label", positive_label="1",
    negative_label="0" and protected_column="group".

    Raises:
        StorageError: If the file cannot be written
    """
    buffer = io.StringIO(newline="")
    writer = csv.writer(buffer)
    writer.writerow([*ds.feature_names, "label", "group"])
    for i in range(ds.n_examples):
        groups = GROUP_SEPARATOR.join(g for j, g in enumerate(ds.groups) if ds.membership[i, j])
        writer.writerow([*(repr(float(v)) for v in ds.features[i]), int(ds.labels[i]), groups])
    atomic_write_text(path, buffer.getvalue())


def distinct_group_values(path: Union[str, Path], protected_column: str) -> List[str]:
    """
    Sorted distinct non-empty values of the protected column, splitting multi-valued cells.

    Raises:
        MissingColumnError: If the column is absent
        EmptyDatasetError: If the file has no data
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"No data in {path}")
    frame.columns = [str(c).strip() for c in frame.columns]
    if protected_column not in frame.columns:
        raise MissingColumnError(protected_column)
    values = set()
    for cell in frame[protected_column]:
        values.update(part.strip() for part in cell.split(GROUP_SEPARATOR) if part.strip())
    return sorted(values)

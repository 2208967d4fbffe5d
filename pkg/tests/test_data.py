"""
Tests for CSV ingestion and group statistics.
"""

from unittest.mock import patch

import pytest

from multical.data import (
    EmptyDatasetError,
    MissingColumnError,
    UnparseableCellError,
    distinct_group_values,
    empirical_group_frequency,
    group_counts,
    ingest_csv,
    write_dataset_csv,
)
from multical.models import GroupSpec, UnknownGroupError
from multical.storage import StorageError


@pytest.fixture
def people_csv(tmp_path):
    path = tmp_path / "people.csv"
    path.write_text(
        "age,color,sex,income\n"
        "30,red,Male,>50K\n"
        "40,blue,Female,<=50K\n"
        "25, red ,Female,>50K.\n"
        "50,green,Male,<=50K.\n"
    )
    return path


def ingest(path, **kwargs):
    return ingest_csv(
        path,
        label_column="income",
        positive_label=">50K,>50K.",
        group_spec=GroupSpec("sex", ["Male", "Female"]),
        feature_columns=["age", "color"],
        **kwargs,
    )


# =============================================================================
# Test Ingestion
# =============================================================================

def test_ingest_one_hot_encodes_categorical_columns(people_csv):
    """Numeric columns pass through; categorical ones expand over sorted levels."""
    ds = ingest(people_csv)

    assert ds.feature_names == ("age", "color=blue", "color=green", "color=red")
    assert ds.features[0].tolist() == [30.0, 0.0, 0.0, 1.0]
    assert ds.features[2].tolist() == [25.0, 0.0, 0.0, 1.0]


def test_ingest_maps_positive_labels(people_csv):
    """Every listed positive value maps to 1."""
    assert ingest(people_csv).labels.tolist() == [1, 0, 1, 0]


def test_ingest_withholds_protected_column(people_csv):
    """The protected column defines groups and is never a feature."""
    ds = ingest(people_csv)

    assert "sex" not in ds.feature_names
    assert group_counts(ds) == {"Male": 2, "Female": 2}


def test_ingest_missing_column(people_csv):
    """A missing feature column is reported by name."""
    with pytest.raises(MissingColumnError) as exc:
        ingest_csv(people_csv, "income", ">50K", GroupSpec("sex", ["Male"]), ["height"])
    assert exc.value.column == "height"


def test_ingest_empty_cell(tmp_path):
    """Empty feature cells are unparseable and carry row and column."""
    path = tmp_path / "bad.csv"
    path.write_text("age,sex,income\n30,Male,>50K\n,Female,<=50K\n")

    with pytest.raises(UnparseableCellError) as exc:
        ingest_csv(path, "income", ">50K", GroupSpec("sex", ["Male", "Female"]), ["age"])
    assert exc.value.row == 1
    assert exc.value.column == "age"


def test_ingest_rejects_infinite_numeric_cell(tmp_path):
    """An "inf" cell in a numeric column is unparseable, not a feature value."""
    path = tmp_path / "inf.csv"
    path.write_text("age,sex,income\n30,Male,>50K\ninf,Female,<=50K\n")

    with pytest.raises(UnparseableCellError) as exc:
        ingest_csv(path, "income", ">50K", GroupSpec("sex", ["Male", "Female"]), ["age"])
    assert exc.value.row == 1
    assert exc.value.column == "age"
    assert exc.value.code == "unparseable_cell"


def test_held_out_file_rejects_infinite_cell(people_csv, tmp_path):
    """A frozen numeric schema still refuses non-finite values."""
    held_out = tmp_path / "held_out.csv"
    held_out.write_text("age,color,sex,income\n-inf,red,Male,>50K\n")

    with pytest.raises(UnparseableCellError):
        ingest(held_out, schema=ingest(people_csv).schema)


def test_ingest_rejects_undeclared_label(people_csv):
    """With negative labels declared, other values are rejected."""
    with pytest.raises(UnparseableCellError):
        ingest(people_csv, negative_label="<=50K")


def test_ingest_accepts_declared_negative_labels(people_csv):
    """Declared negative values map to 0."""
    ds = ingest(people_csv, negative_label="<=50K,<=50K.")

    assert ds.labels.tolist() == [1, 0, 1, 0]


def test_ingest_header_only(tmp_path):
    """A header without rows is an empty dataset."""
    path = tmp_path / "empty.csv"
    path.write_text("age,sex,income\n")

    with pytest.raises(EmptyDatasetError):
        ingest_csv(path, "income", ">50K", GroupSpec("sex", ["Male"]), ["age"])


def test_ingest_empty_file(tmp_path):
    """A completely empty file is an empty dataset."""
    path = tmp_path / "nothing.csv"
    path.write_text("")

    with pytest.raises(EmptyDatasetError):
        ingest_csv(path, "income", ">50K", GroupSpec("sex", ["Male"]), ["age"])


def test_ingest_reuses_schema_for_held_out_file(people_csv, tmp_path):
    """A held-out file encoded with the training schema keeps feature positions."""
    train = ingest(people_csv)
    held_out = tmp_path / "held_out.csv"
    held_out.write_text("age,color,sex,income\n33,purple,Male,>50K\n35,blue,Female,<=50K\n")

    ds = ingest(held_out, schema=train.schema)

    assert ds.feature_names == train.feature_names
    assert ds.features[0].tolist() == [33.0, 0.0, 0.0, 0.0]
    assert ds.features[1].tolist() == [35.0, 1.0, 0.0, 0.0]


def test_ingest_multi_valued_protected_cells(tmp_path):
    """'|' separates several groups in one cell; empty means no group."""
    path = tmp_path / "overlap.csv"
    path.write_text("x,group,label\n1,A|B,1\n2,A,0\n3,,1\n")

    ds = ingest_csv(path, "label", "1", GroupSpec("group", ["A", "B"]), ["x"])

    assert ds.group_mask("A").tolist() == [True, True, False]
    assert ds.group_mask("B").tolist() == [True, False, False]


def test_ingest_defaults_to_all_other_columns(tmp_path):
    """Without a feature list every non-label, non-protected column is used."""
    path = tmp_path / "plain.csv"
    path.write_text("x0,x1,label,group\n1,2,1,A\n3,4,0,B\n")

    ds = ingest_csv(path, "label", "1", GroupSpec("group", ["A", "B"]), [])

    assert ds.feature_names == ("x0", "x1")


# =============================================================================
# Test Group Statistics
# =============================================================================

def test_empirical_group_frequency(people_csv):
    """Frequency is the group's share of examples."""
    ds = ingest(people_csv)

    assert empirical_group_frequency(ds, "Male") == 0.5


def test_empirical_group_frequency_unknown_group(people_csv):
    """Undeclared groups raise UnknownGroupError."""
    with pytest.raises(UnknownGroupError):
        empirical_group_frequency(ingest(people_csv), "Other")


def test_empirical_group_frequency_empty_dataset(people_csv):
    """Frequency is undefined on an empty dataset."""
    empty = ingest(people_csv).subset([])

    with pytest.raises(EmptyDatasetError):
        empirical_group_frequency(empty, "Male")


def test_distinct_group_values(tmp_path):
    """Protected values are collected across multi-valued cells."""
    path = tmp_path / "overlap.csv"
    path.write_text("x,group,label\n1,B|A,1\n2,C,0\n3,,1\n")

    assert distinct_group_values(path, "group") == ["A", "B", "C"]


# =============================================================================
# Test Dataset Export
# =============================================================================

def test_write_dataset_csv_is_re_ingestible(people_csv, tmp_path):
    """An exported dataset ingests back to identical arrays."""
    ds = ingest(people_csv)
    out = tmp_path / "encoded.csv"
    write_dataset_csv(ds, out)

    again = ingest_csv(out, "label", "1", GroupSpec("group", ["Male", "Female"]), list(ds.feature_names),
                       negative_label="0")

    assert (again.features == ds.features).all()
    assert (again.labels == ds.labels).all()
    assert (again.membership == ds.membership).all()


def test_write_dataset_csv_leaves_no_temporary_file(people_csv, tmp_path):
    """The export replaces its target in one step."""
    out = tmp_path / "exports" / "encoded.csv"

    write_dataset_csv(ingest(people_csv), out)

    assert sorted(p.name for p in out.parent.iterdir()) == ["encoded.csv"]
    assert out.read_text().splitlines()[0] == "age,color=blue,color=green,color=red,label,group"


def test_write_dataset_csv_failure_keeps_previous_file(people_csv, tmp_path):
    """A failed write raises StorageError and leaves the old export intact."""
    out = tmp_path / "encoded.csv"
    out.write_text("previous\n")
    ds = ingest(people_csv)

    with patch("builtins.open", side_effect=OSError(28, "No space left on device")):
        with pytest.raises(StorageError):
            write_dataset_csv(ds, out)

    assert out.read_text() == "previous\n"
    assert not (tmp_path / "encoded.csv.tmp").exists()

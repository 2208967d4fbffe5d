"""
Tests for the storage module.

This module tests atomic writes, canonical JSON and model persistence.
"""

import json
import os
from unittest.mock import patch

import numpy as np
import pytest

from multical.models import LabeledDataset
from multical.storage import (
    MODEL_FORMAT,
    StorageError,
    atomic_write_text,
    dumps_json,
    load_json,
    load_model,
    save_json,
    save_model,
)
from multical.trainers import (
    LinearSvmConfig,
    ModelKind,
    RbfSvmConfig,
    ReluNetConfig,
    constant_predictor,
    train_linear_svm,
    train_rbf_svm,
    train_relu_net,
)


@pytest.fixture
def training_set():
    """A small noisy two-class dataset."""
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 3))
    y = (X[:, 0] + 0.5 * rng.standard_normal(30) > 0).astype(int)
    return LabeledDataset(features=X, labels=y, groups=(), membership=np.zeros((30, 0)))


# =============================================================================
# Test Atomic Writes
# =============================================================================

def test_atomic_write_creates_parent_directories(tmp_path):
    """Missing parent directories are created."""
    path = tmp_path / "a" / "b" / "out.txt"
    atomic_write_text(path, "hello\n")

    assert path.read_text() == "hello\n"
    assert not (path.parent / "out.txt.tmp").exists()


def test_atomic_write_keeps_old_content_on_failure(tmp_path):
    """A failed write leaves the previous file intact."""
    path = tmp_path / "out.txt"
    atomic_write_text(path, "old")

    with patch("builtins.open", side_effect=OSError(28, "No space left on device")):
        with pytest.raises(StorageError, match="Failed to write"):
            atomic_write_text(path, "new")

    assert path.read_text() == "old"


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_atomic_write_permission_denied(tmp_path):
    """Permission errors surface as StorageError."""
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o555)
    try:
        with pytest.raises(StorageError):
            atomic_write_text(locked / "out.txt", "x")
    finally:
        locked.chmod(0o755)


# =============================================================================
# Test JSON
# =============================================================================

def test_dumps_json_is_canonical():
    """Keys are sorted and the text ends with a newline."""
    assert dumps_json({"b": 1, "a": [1.5]}) == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'


def test_json_round_trip(tmp_path):
    """save_json/load_json preserve the document."""
    path = tmp_path / "doc.json"
    save_json(path, {"x": 0.1, "items": [1, 2]})

    assert load_json(path) == {"x": 0.1, "items": [1, 2]}


def test_load_json_corrupted_file(tmp_path):
    """Invalid JSON raises StorageError."""
    path = tmp_path / "bad.json"
    path.write_text("{invalid json content")

    with pytest.raises(StorageError, match="invalid JSON"):
        load_json(path)


def test_load_json_missing_file(tmp_path):
    """A missing file raises StorageError."""
    with pytest.raises(StorageError):
        load_json(tmp_path / "absent.json")


# =============================================================================
# Test Model Persistence
# =============================================================================

@pytest.mark.parametrize("kind", list(ModelKind))
def test_saved_model_scores_are_bit_identical(kind, training_set, tmp_path):
    """A reloaded model produces exactly the same raw scores."""
    if kind is ModelKind.LINEAR_SVM:
        model = train_linear_svm(training_set, LinearSvmConfig(epochs=3))
    elif kind is ModelKind.RBF_SVM:
        model = train_rbf_svm(training_set, RbfSvmConfig(gamma=0.3, epochs=3))
    else:
        model = train_relu_net(training_set, ReluNetConfig(hidden_units=6, epochs=3))
    path = tmp_path / "model.json"

    save_model(model, path)
    again = load_model(path)

    assert again.kind is kind
    assert np.array_equal(again.raw_scores(training_set.features), model.raw_scores(training_set.features))
    assert again.history == model.history


def test_saved_model_is_tagged(tmp_path):
    """The file carries a format tag and version."""
    path = tmp_path / "model.json"
    save_model(constant_predictor(1, 2), path)

    document = json.loads(path.read_text())

    assert document["format"] == MODEL_FORMAT
    assert document["version"] == 1
    assert document["degenerate"] is True


def test_load_model_rejects_untagged_json(tmp_path):
    """Arbitrary JSON is not a model."""
    path = tmp_path / "other.json"
    path.write_text('{"kind": "LinearSVM"}')

    with pytest.raises(StorageError, match="not a"):
        load_model(path)


def test_load_model_rejects_other_version(tmp_path):
    """Unknown versions are refused."""
    path = tmp_path / "future.json"
    save_model(constant_predictor(0, 1), path)
    document = json.loads(path.read_text())
    document["version"] = 99
    path.write_text(json.dumps(document))

    with pytest.raises(StorageError, match="Unsupported model version"):
        load_model(path)


def test_load_model_rejects_missing_params(tmp_path):
    """A tagged document without params is invalid."""
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"format": MODEL_FORMAT, "version": 1, "kind": "ReluNet"}))

    with pytest.raises(StorageError, match="Invalid model"):
        load_model(path)

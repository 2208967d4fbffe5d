"""
Storage module for persisting models and run artifacts.

Every file is written atomically: content goes to a temporary sibling first
and is renamed over the target, so a crash never leaves a half-written file.
"""

import json
import logging
from pathlib import Path
from typing import Any, Union

from multical.models import MulticalError
from multical.trainers import PredictorModel

logger = logging.getLogger(__name__)

MODEL_FORMAT = "multical-model"
MODEL_VERSION = 1


class StorageError(MulticalError):
    """Exception raised for storage-related errors."""

    code = "storage_error"


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    """
    Write bytes to ``path`` via a temporary file and rename.

    Raises:
        StorageError: If the file cannot be written
    """
    path = Path(path)
    temp_path = path.parent / f"{path.name}.tmp"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(temp_path, "wb") as f:
            f.write(data)
        temp_path.replace(path)
    except OSError as e:
        if temp_path.exists():
            temp_path.unlink()
        raise StorageError(f"Failed to write {path}: {e}")
    logger.info("Wrote %s (%d bytes)", path, len(data))


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_json(path: Union[str, Path], data: Any) -> None:
    atomic_write_text(path, dumps_json(data))


def load_json(path: Union[str, Path]) -> Any:
    """
    Load a JSON document.

    Raises:
        StorageError: If the file is missing or not valid JSON
    """
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise StorageError(f"Failed to load {path}: invalid JSON format - {e}")
    except OSError as e:
        raise StorageError(f"Failed to load {path}: {e}")


def save_model(model: PredictorModel, path: Union[str, Path]) -> None:
    """
    Save a model as tagged JSON.

    Floats are written with their shortest round-trip representation, so a
    reloaded model produces bit-identical scores.
    """
    document = {"format": MODEL_FORMAT, "version": MODEL_VERSION, **model.to_dict()}
    save_json(path, document)


def load_model(path: Union[str, Path]) -> PredictorModel:
    """
    Load a model written by ``save_model``.

    Raises:
        StorageError: If the file is unreadable, untagged or of another version
    """
    data = load_json(path)
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise StorageError(f"{path} is not a {MODEL_FORMAT} file")
    if data.get("version") != MODEL_VERSION:
        raise StorageError(f"Unsupported model version {data.get('version')} in {path}")
    try:
        return PredictorModel.from_dict(data)
    except (KeyError, ValueError, MulticalError) as e:
        raise StorageError(f"Invalid model in {path}: {e}")

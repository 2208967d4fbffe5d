"""
Flat key=value configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored and
whitespace around keys and values is stripped. Keys are command-line flag
names with ``-`` replaced by ``_`` (``--b-sq`` is ``b_sq``).
"""

import logging
import os
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from multical.models import MulticalError

logger = logging.getLogger(__name__)

WORKERS_ENV = "MULTICAL_WORKERS"


class ConfigError(MulticalError):
    """Raised for malformed, duplicate or unknown configuration keys."""

    code = "config_error"


def flag_to_key(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def key_to_flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def parse_config(text: str, source: Union[str, Path] = "<string>") -> Dict[str, str]:
    """
    Parse config text into a dict of raw string values.

    Raises:
        ConfigError: If a line has no ``=``, an empty key, or repeats a key
    """
    values: Dict[str, str] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = flag_to_key(key.strip())
        if not sep or not key:
            raise ConfigError(f"{source}:{line_number}: expected key=value, got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{line_number}: duplicate key {key}")
        values[key] = value.strip()
    return values


def load_config(path: Union[str, Path], allowed: Optional[Iterable[str]] = None) -> Dict[str, str]:
    """
    Load a config file, optionally rejecting keys outside ``allowed``.

    Raises:
        ConfigError: If the file is unreadable, malformed, or names an unknown key
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Failed to read config {path}: {e}")
    values = parse_config(text, path)
    if allowed is not None:
        unknown = sorted(set(values) - set(allowed))
        if unknown:
            raise ConfigError(f"Unknown keys in {path}: {', '.join(unknown)}")
    logger.info("Loaded %d settings from %s", len(values), path)
    return values


def workers_from_env() -> Optional[int]:
    """
    Worker count from MULTICAL_WORKERS, or None when unset.

    Raises:
        ConfigError: If the variable is not a positive integer
    """
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return None
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return workers


def merge_settings(*layers: Dict[str, object]) -> Dict[str, object]:
    """Later layers override earlier ones; None values never override."""
    merged: Dict[str, object] = {}
    for layer in layers:
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged

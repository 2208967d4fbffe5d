"""
Calibration sweeps: splits x model kinds, one record per category.

Every split of a plan is trained once per requested model kind. Each trained
model is evaluated on its split's test set, producing a CalibrationRecord
for every (group, predicted label) of the two split groups. Tasks run on a
bounded thread pool; records are sorted before writing, so the output file
does not depend on scheduling or on the number of workers.
"""

import csv
import hashlib
import io
import logging
import math
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from multical.calibration import stats_from_predictions
from multical.data import EmptyDatasetError, distinct_group_values, ingest_csv
from multical.models import GroupSpec, LabeledDataset, MulticalError, ValidationError
from multical.oracle import load_atom_table, sample
from multical.seeding import mix64
from multical.splitter import Split, SplitPlan, enumerate_splits, filter_by_train_size
from multical.storage import StorageError, atomic_write_text, dumps_json
from multical.trainers import ModelKind, accuracy, make_config, train

logger = logging.getLogger(__name__)

DEFAULT_WORKERS = 1
P90_NUMERATOR = 9
P90_DENOMINATOR = 10
# Stream index for the oracle sample, kept apart from split seeds.
ORACLE_SAMPLE_STREAM = 0x6F7261636C65
MODEL_KIND_ORDER = list(ModelKind)

RECORD_COLUMNS = (
    "dataset_id",
    "model_kind",
    "group",
    "predicted_label",
    "z1",
    "z2",
    "rep",
    "train_size",
    "test_size",
    "gamma_hat",
    "psi_hat",
    "frequency",
    "calibration_error",
    "train_accuracy",
    "test_accuracy",
    "split_seed",
    "error_code",
)
_INT_COLUMNS = {"predicted_label", "z1", "z2", "rep", "train_size", "test_size", "split_seed"}
_FLOAT_COLUMNS = {"gamma_hat", "psi_hat", "frequency", "calibration_error", "train_accuracy", "test_accuracy"}


@dataclass
class DatasetSource:
    """
    Where a sweep's data comes from.

    ``format`` is "csv" (ingested with the label and group fields) or
    "atoms" (an atom table sampled ``n`` times). Empty feature and group
    lists mean every non-label column and every protected value.
    """

    path: str
    format: str = "csv"
    label_column: str = "label"
    positive_label: str = "1"
    negative_label: Optional[str] = None
    protected_column: str = "group"
    group_values: List[str] = field(default_factory=list)
    feature_columns: List[str] = field(default_factory=list)
    n: Optional[int] = None

    def __post_init__(self):
        self.path = str(self.path)
        self.format = self.format.strip().lower()
        for name in ("group_values", "feature_columns"):
            value = getattr(self, name)
            if isinstance(value, str):
                setattr(self, name, [v.strip() for v in value.split(",") if v.strip()])
        if self.n is not None:
            self.n = int(self.n)

    def validate(self) -> None:
        if self.format not in ("csv", "atoms"):
            raise ValidationError(f"Invalid dataset format: {self.format} (expected csv or atoms)")
        if self.format == "atoms" and (self.n is None or self.n < 1):
            raise ValidationError("Atom-table sources need a positive sample size n")

    def load(self, seed: int) -> LabeledDataset:
        """Ingest the CSV, or sample the atom table with a seed derived from ``seed``."""
        if self.format == "atoms":
            return sample(load_atom_table(self.path), self.n, mix64(seed, ORACLE_SAMPLE_STREAM))
        groups = self.group_values or distinct_group_values(self.path, self.protected_column)
        spec = GroupSpec(self.protected_column, groups)
        return ingest_csv(
            self.path,
            self.label_column,
            self.positive_label,
            spec,
            self.feature_columns,
            negative_label=self.negative_label,
        )


@dataclass
class SweepConfig:
    """
    A full sweep.

    Attributes:
        source: Dataset to load
        g1: Group whose training count comes from plan.v1
        g2: Group whose training count comes from plan.v2
        plan: Split plan (counts, reps, seed, augmentation, window)
        model_kinds: Model kinds trained on every split
        output: Records CSV path; the sidecar is ``<output>.json``
        trainer_params: Overrides of trainer defaults (reg_lambda, epochs, gamma, ...)
        dataset_id: Label written in every record
        workers: Thread-pool size
    """

    source: DatasetSource
    g1: str
    g2: str
    plan: SplitPlan
    model_kinds: List[ModelKind]
    output: str
    trainer_params: Dict[str, Any] = field(default_factory=dict)
    dataset_id: str = ""
    workers: int = DEFAULT_WORKERS

    def __post_init__(self):
        if isinstance(self.model_kinds, str):
            self.model_kinds = [k for k in self.model_kinds.split(",") if k.strip()]
        kinds = [ModelKind.parse(k) for k in self.model_kinds]
        self.model_kinds = sorted(set(kinds), key=MODEL_KIND_ORDER.index)
        self.output = str(self.output)
        self.workers = int(self.workers)
        if not self.source.group_values:
            self.source.group_values = [self.g1, self.g2]
        if not self.dataset_id:
            self.dataset_id = Path(self.source.path).stem

    def validate(self) -> None:
        """
        Raises:
            ValidationError: If no model kind is requested, workers < 1, the
                output directory is missing, or a nested config is invalid
        """
        if not self.model_kinds:
            raise ValidationError("At least one model kind is required")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.g1 == self.g2:
            raise ValidationError(f"g1 and g2 must differ, got {self.g1!r} twice")
        parent = Path(self.output).parent
        if not parent.is_dir():
            raise ValidationError(f"Output directory does not exist: {parent}")
        self.source.validate()
        self.plan.validate()
        for kind in self.model_kinds:
            make_config(kind, self.trainer_params).validate()

    @property
    def sidecar_path(self) -> Path:
        return Path(self.output + ".json")

    def to_dict(self) -> dict:
        """Config echo with every trainer setting resolved; the worker count is omitted since it does not change output."""
        trainers = {}
        for kind in self.model_kinds:
            settings = asdict(make_config(kind, self.trainer_params))
            settings.pop("seed")
            trainers[kind.value] = settings
        return {
            "dataset_id": self.dataset_id,
            "source": asdict(self.source),
            "g1": self.g1,
            "g2": self.g2,
            "plan": self.plan.to_dict(),
            "model_kinds": [k.value for k in self.model_kinds],
            "trainers": trainers,
        }


@dataclass(frozen=True)
class CalibrationRecord:
    """One category of one trained model on one split; failure rows carry error_code and nulls."""

    dataset_id: str
    model_kind: str
    group: str
    predicted_label: Optional[int]
    z1: int
    z2: int
    rep: int
    train_size: int
    test_size: int
    gamma_hat: Optional[float]
    psi_hat: Optional[float]
    frequency: Optional[float]
    calibration_error: Optional[float]
    train_accuracy: Optional[float]
    test_accuracy: Optional[float]
    split_seed: int
    error_code: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error_code)

    def sort_key(self) -> Tuple:
        label = -1 if self.predicted_label is None else self.predicted_label
        return (self.model_kind, self.z1, self.z2, self.rep, self.group, label)

    def to_row(self) -> List[str]:
        row = []
        for name in RECORD_COLUMNS:
            value = getattr(self, name)
            if value is None:
                row.append("")
            elif name in _FLOAT_COLUMNS:
                row.append(repr(float(value)))
            else:
                row.append(str(value))
        return row

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "CalibrationRecord":
        values: Dict[str, Any] = {}
        for name in RECORD_COLUMNS:
            text = row[name]
            if name in _INT_COLUMNS:
                values[name] = int(text) if text != "" else None
            elif name in _FLOAT_COLUMNS:
                values[name] = float(text) if text != "" else None
            else:
                values[name] = text
        return cls(**values)


@dataclass
class SweepResult:
    records: List[CalibrationRecord]
    failures: int
    interrupted: bool
    sha256: str

    @property
    def ok(self) -> bool:
        return self.failures == 0 and not self.interrupted


def task_seed(split_seed: int, kind: ModelKind) -> int:
    """Trainer seed of one (split, model kind) task."""
    return mix64(split_seed, MODEL_KIND_ORDER.index(kind))


def _evaluate(ds: LabeledDataset, cfg: SweepConfig, split: Split, kind: ModelKind) -> List[CalibrationRecord]:
    train_set = ds.subset(split.train_indices)
    test_set = ds.subset(split.test_indices)
    if test_set.n_examples == 0:
        raise EmptyDatasetError("Split leaves no test examples")
    model = train(kind, train_set, make_config(kind, cfg.trainer_params, task_seed(split.split_seed, kind)))
    predictions = model.predict_batch(test_set.features)
    train_accuracy = accuracy(model, train_set)
    test_accuracy = float((predictions == test_set.labels).mean())
    records = []
    for stats in stats_from_predictions(predictions, test_set):
        if stats.category.group not in (cfg.g1, cfg.g2):
            continue
        records.append(CalibrationRecord(
            dataset_id=cfg.dataset_id,
            model_kind=kind.value,
            group=stats.category.group,
            predicted_label=stats.category.predicted_label,
            z1=split.z1,
            z2=split.z2,
            rep=split.rep,
            train_size=split.train_size,
            test_size=split.test_size,
            gamma_hat=stats.gamma_hat,
            psi_hat=stats.psi_hat,
            frequency=stats.frequency,
            calibration_error=stats.calibration_error,
            train_accuracy=train_accuracy,
            test_accuracy=test_accuracy,
            split_seed=split.split_seed,
        ))
    return records


def _failure(cfg: SweepConfig, split: Split, kind: ModelKind, error: Exception) -> CalibrationRecord:
    code = getattr(error, "code", "runtime_error")
    logger.warning("Task %s z1=%d z2=%d rep=%d failed: %s (%s)", kind.value, split.z1, split.z2, split.rep, error, code)
    return CalibrationRecord(
        dataset_id=cfg.dataset_id,
        model_kind=kind.value,
        group="",
        predicted_label=None,
        z1=split.z1,
        z2=split.z2,
        rep=split.rep,
        train_size=split.train_size,
        test_size=split.test_size,
        gamma_hat=None,
        psi_hat=None,
        frequency=None,
        calibration_error=None,
        train_accuracy=None,
        test_accuracy=None,
        split_seed=split.split_seed,
        error_code=code,
    )


def _run_task(ds: LabeledDataset, cfg: SweepConfig, split: Split, kind: ModelKind) -> List[CalibrationRecord]:
    try:
        return _evaluate(ds, cfg, split, kind)
    except (MulticalError, ArithmeticError, np.linalg.LinAlgError) as e:
        return [_failure(cfg, split, kind, e)]
    except Exception as e:
        logger.exception("Unexpected error in task %s z1=%d z2=%d rep=%d", kind.value, split.z1, split.z2, split.rep)
        return [_failure(cfg, split, kind, e)]


def format_records(records: Iterable[CalibrationRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for record in records:
        writer.writerow(record.to_row())
    return buffer.getvalue()


def write_records(
    records: Sequence[CalibrationRecord], cfg: SweepConfig, interrupted: bool = False
) -> str:
    """Write the records CSV and its JSON sidecar; returns the CSV's SHA-256."""
    text = format_records(records)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    atomic_write_text(cfg.output, text)
    sidecar = {
        "config": cfg.to_dict(),
        "records": len(records),
        "failures": sum(1 for r in records if r.failed),
        "interrupted": interrupted,
        "sha256": digest,
    }
    atomic_write_text(cfg.sidecar_path, dumps_json(sidecar))
    return digest


def run_sweep(
    cfg: SweepConfig,
    dataset: Optional[LabeledDataset] = None,
    stop_event: Optional[threading.Event] = None,
) -> SweepResult:
    """
    Train every (split, model kind) task and persist the sorted records.

    Failing tasks become failure rows instead of aborting the sweep. When
    ``stop_event`` is set, no further tasks are started; tasks in flight
    finish and the partial records are written.

    Args:
        cfg: Sweep configuration
        dataset: Preloaded dataset; loaded from cfg.source when None
        stop_event: Request a graceful drain

    Raises:
        ValidationError: If the config is invalid
        PoolTooSmallError: If a count exceeds its group pool
        InvalidWindowError: If the train-size window is inverted
    """
    cfg.validate()
    ds = dataset if dataset is not None else cfg.source.load(cfg.plan.seed)
    splits: Iterable[Split] = enumerate_splits(ds, cfg.g1, cfg.g2, cfg.plan)
    if cfg.plan.train_size_window is not None:
        splits = filter_by_train_size(splits, cfg.plan.train_size_window)

    records: List[CalibrationRecord] = []
    interrupted = False
    finished = 0
    window = cfg.workers * 2
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        pending = set()

        def collect(done):
            nonlocal finished
            for future in done:
                records.extend(future.result())
                finished += 1
                logger.info("Finished %d tasks", finished)

        for split in splits:
            for kind in cfg.model_kinds:
                if stop_event is not None and stop_event.is_set():
                    interrupted = True
                    break
                pending.add(pool.submit(_run_task, ds, cfg, split, kind))
                if len(pending) >= window:
                    done, pending = wait(pending, return_when=FIRST_COMPLETED)
                    collect(done)
            if interrupted:
                break
        done, _ = wait(pending)
        collect(done)

    if interrupted:
        logger.warning("Sweep interrupted after %d tasks; writing partial records", finished)
    records.sort(key=CalibrationRecord.sort_key)
    digest = write_records(records, cfg, interrupted)
    failures = sum(1 for r in records if r.failed)
    logger.info("Sweep wrote %d records (%d failures) to %s", len(records), failures, cfg.output)
    return SweepResult(records, failures, interrupted, digest)


def load_records(path: Union[str, Path]) -> List[CalibrationRecord]:
    """
    Read a records CSV written by ``run_sweep``.

    Raises:
        StorageError: If the file is missing or its header differs
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.EmptyDataError) as e:
        raise StorageError(f"Failed to load {path}: {e}")
    if tuple(frame.columns) != RECORD_COLUMNS:
        raise StorageError(f"{path} is not a records file: unexpected columns {list(frame.columns)}")
    return [CalibrationRecord.from_row(row) for row in frame.to_dict("records")]


class InvalidBinsError(MulticalError):
    """Raised when frequency bins are inverted or overlap."""

    code = "invalid_params"


@dataclass(frozen=True)
class BinSummary:
    """Dispersion of |calibration error| within one frequency bin."""

    lo: float
    hi: float
    count: int
    mean_abs_error: Optional[float]
    p90_abs_error: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def parse_bins(text: str) -> List[Tuple[float, float]]:
    """Parse ``lo:hi,lo:hi,...``."""
    bins = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition(":")
        if not sep:
            raise InvalidBinsError(f"Bin {part!r} is not of the form lo:hi")
        try:
            bins.append((float(lo), float(hi)))
        except ValueError:
            raise InvalidBinsError(f"Bin {part!r} has a non-numeric bound")
    return bins


def validate_bins(bins: Sequence[Tuple[float, float]]) -> None:
    """
    Raises:
        InvalidBinsError: If there are no bins, a bin has lo >= hi, or two bins overlap
    """
    if not bins:
        raise InvalidBinsError("At least one bin is required")
    for lo, hi in bins:
        if not lo < hi:
            raise InvalidBinsError(f"Bin {lo}:{hi} must have lo < hi")
    ordered = sorted(bins)
    for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
        if lo < hi:
            raise InvalidBinsError(f"Bins overlap at {lo}")


def nearest_rank_p90(values: Sequence[float]) -> Optional[float]:
    """The ceil(0.9 n)-th smallest value; None for no values."""
    if not values:
        return None
    ordered = sorted(values)
    rank = -(-P90_NUMERATOR * len(ordered) // P90_DENOMINATOR)
    return ordered[rank - 1]


def dispersion_summary(
    records: Iterable[CalibrationRecord], frequency_bins: Sequence[Tuple[float, float]]
) -> List[BinSummary]:
    """
    Count, mean and nearest-rank p90 of |calibration error| per frequency bin.

    Bins are [lo, hi) except the one with the largest hi, which includes hi.
    Failure rows and empty categories are excluded.
    """
    validate_bins(frequency_bins)
    top = max(hi for _, hi in frequency_bins)
    usable = [r for r in records if not r.failed and r.calibration_error is not None]
    summaries = []
    for lo, hi in frequency_bins:
        closed = hi == top
        errors = [
            abs(r.calibration_error)
            for r in usable
            if lo <= r.frequency < hi or (closed and r.frequency == hi)
        ]
        summaries.append(BinSummary(
            lo=lo,
            hi=hi,
            count=len(errors),
            mean_abs_error=math.fsum(errors) / len(errors) if errors else None,
            p90_abs_error=nearest_rank_p90(errors),
        ))
    return summaries

"""
Command-line interface for multical.

Every subcommand is described by one option table. The table builds the
argparse parser (so ``--help`` lists every key) and validates config-file
keys. Settings resolve as: built-in default < preset < config file <
command-line flag < MULTICAL_WORKERS (workers only).

Exit codes: 0 on success, 1 on invalid input (nothing written), 2 on a
runtime failure (partial output kept, failure rows included). Errors are
reported on standard error as ``code=..., msg=...``.
"""

import argparse
import logging
import signal
import sys
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

from multical import __version__
from multical.bounds import (
    FairnessParams,
    group_occupancy_threshold,
    hard_margin_multicalibration_bound,
    kernel_erm_sample_complexity,
    kernel_group_complexity,
    kernel_multicalibration_bound,
    linear_vc_dimension,
    multicalibration_from_erm,
    relu_erm_sample_complexity,
    relu_group_complexity,
    relu_multicalibration_bound,
    two_sided_generalization_gap,
    vc_group_complexity,
    vc_multicalibration_bound,
)
from multical.calibration import Category, empirical_calibration_error
from multical.config import ConfigError, key_to_flag, load_config, merge_settings, workers_from_env
from multical.data import group_counts, write_dataset_csv
from multical.experiment import (
    DatasetSource,
    SweepConfig,
    dispersion_summary,
    load_records,
    parse_bins,
    run_sweep,
    task_seed,
)
from multical.models import MulticalError
from multical.oracle import load_atom_table, sample, true_category_errors
from multical.presets import PRESETS, get_preset
from multical.rademacher import (
    build_rbf_kernel_matrix,
    kernel_rademacher_closed_form_bound,
    kernel_rademacher_exact_sup,
    relu_bound_inputs,
    relu_rademacher_closed_form_bound,
)
from multical.splitter import SplitPlan, enumerate_splits, filter_by_train_size, split_grid
from multical.storage import dumps_json, load_model, save_json, save_model
from multical.trainers import ModelKind, NonFiniteLossError, accuracy, make_config, train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
RUNTIME_ERRORS = (NonFiniteLossError,)
FORMULAS = ["main", "vc", "kernel", "relu", "hard-margin", "gap", "occupancy"]
ERM_CLASSES = ["vc", "kernel", "relu"]
TRUE_VALUES = {"true", "1", "yes", "on"}
FALSE_VALUES = {"false", "0", "no", "off", ""}


class UsageError(MulticalError):
    """Raised for bad flags, missing required settings or unparseable values."""

    code = "usage_error"


class MulticalArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in TRUE_VALUES:
        return True
    if text in FALSE_VALUES:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _float_list(value: Any) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


@dataclass(frozen=True)
class Option:
    """One setting of a subcommand: a ``--flag`` and a config-file key."""

    key: str
    help: str
    type: Callable[[str], Any] = str
    default: Any = None
    required: bool = False
    choices: Optional[Sequence[str]] = None
    flag: bool = False

    @property
    def flag_name(self) -> str:
        return key_to_flag(self.key)

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        text = self.help
        if self.required:
            text += " (required)"
        elif self.default is not None:
            text += f" (default: {self.default})"
        if self.flag:
            parser.add_argument(self.flag_name, dest=self.key, action="store_true",
                                default=argparse.SUPPRESS, help=text)
        else:
            parser.add_argument(self.flag_name, dest=self.key, type=self.type, choices=self.choices,
                                default=argparse.SUPPRESS, metavar=self.key.upper(), help=text)

    def convert(self, value: Any) -> Any:
        """Convert a config-file or preset value; flag values arrive converted."""
        if value is None:
            return None
        try:
            converted = _bool(value) if self.flag else (self.type(value) if isinstance(value, str) else value)
        except ValueError:
            raise UsageError(f"Invalid value for {self.flag_name}: {value!r}")
        if self.choices is not None and converted not in self.choices:
            raise UsageError(f"Invalid value for {self.flag_name}: {value!r} (choose from {', '.join(self.choices)})")
        return converted


# =============================================================================
# Option tables
# =============================================================================

DATA_OPTIONS = [
    Option("preset", "Dataset preset", choices=sorted(PRESETS)),
    Option("input", "Dataset CSV or atom table", required=True),
    Option("format", "Input format", default="csv", choices=["csv", "atoms"]),
    Option("n", "Sample size drawn from an atom table", type=int),
    Option("label_column", "Label column", default="label"),
    Option("positive_label", "Comma-separated label values mapped to 1", default="1"),
    Option("negative_label", "Comma-separated label values mapped to 0 (others rejected)"),
    Option("protected_column", "Protected column defining groups", default="group"),
    Option("feature_columns", "Comma-separated feature columns (default: all others)"),
    Option("group_values", "Comma-separated group values (default: all values present)"),
]

PLAN_OPTIONS = [
    Option("g1", "First group", required=True),
    Option("g2", "Second group", required=True),
    Option("v1", "Comma-separated training counts drawn from g1", required=True),
    Option("v2", "Comma-separated training counts drawn from g2", required=True),
    Option("reps", "Repetitions per (z1, z2)", type=int, default=25),
    Option("seed", "Root seed", type=int, default=0),
    Option("augment_with_others", "Add examples outside both groups to training", flag=True, default=False),
    Option("train_size_min", "Smallest training size kept", type=int),
    Option("train_size_max", "Largest training size kept", type=int),
]

TRAINER_OPTIONS = [
    Option("reg_lambda", "SVM regularisation", type=float),
    Option("epochs", "Training epochs", type=int),
    Option("learning_rate", "ReLU learning rate", type=float),
    Option("hidden_units", "ReLU hidden units", type=int),
    Option("batch_size", "ReLU mini-batch size", type=int),
    Option("gamma", "RBF kernel width", type=float),
]

FAIRNESS_OPTIONS = [
    Option("epsilon", "Calibration accuracy", type=float),
    Option("delta", "Failure probability", type=float),
    Option("gamma", "Minimum group frequency", type=float),
    Option("psi", "Minimum prediction frequency within a group", type=float),
    Option("num_groups", "Number of groups |G|", type=int, default=2),
    Option("num_labels", "Number of labels |Y|", type=int, default=2),
]

COMMANDS: Dict[str, dict] = {
    "ingest": {
        "help": "Ingest a CSV and write the encoded dataset",
        "options": DATA_OPTIONS + [Option("out", "Encoded dataset CSV", required=True)],
    },
    "split": {
        "help": "Enumerate demographic train/test splits",
        "options": DATA_OPTIONS + PLAN_OPTIONS + [
            Option("dry_run", "Only print the split grid", flag=True, default=False),
            Option("out", "Split manifest JSON"),
        ],
    },
    "train": {
        "help": "Train one model",
        "options": DATA_OPTIONS + TRAINER_OPTIONS + [
            Option("model", "Model kind", required=True, choices=[k.value for k in ModelKind]),
            Option("seed", "Root seed", type=int, default=0),
            Option("out", "Model JSON", required=True),
        ],
    },
    "sweep": {
        "help": "Run a calibration sweep",
        "options": DATA_OPTIONS + PLAN_OPTIONS + TRAINER_OPTIONS + [
            Option("models", "Comma-separated model kinds", default="LinearSVM,RbfSVM,ReluNet"),
            Option("dataset_id", "Dataset label written in records"),
            Option("workers", "Worker threads", type=int, default=1),
            Option("out", "Records CSV", required=True),
        ],
    },
    "bounds": {
        "help": "Evaluate a sample-complexity bound",
        "options": [Option("formula", "Bound to evaluate", required=True, choices=FORMULAS)] + FAIRNESS_OPTIONS + [
            Option("erm_class", "Group complexity used by --formula main", default="vc", choices=ERM_CLASSES),
            Option("d_vc", "VC dimension", type=int),
            Option("dim", "Input dimension (VC dimension of halfspaces is dim + 1)", type=int),
            Option("leading_const", "Constant of O(.) bounds", type=float, default=1.0),
            Option("b_sq", "Kernel bound B^2", type=float),
            Option("lambda", "Margin lambda", type=float),
            Option("d_max", "Widest layer", type=int),
            Option("frobenius_x", "Frobenius norm of the data matrix", type=float),
            Option("spectral", "Comma-separated spectral norms", type=_float_list),
            Option("two_one", "Comma-separated (2,1) norms", type=_float_list),
            Option("diameter", "Data diameter D", type=float),
            Option("rho", "Hard margin", type=float),
            Option("rademacher", "Rademacher complexity", type=float),
            Option("loss_bound", "Loss bound c", type=float, default=1.0),
            Option("n", "Sample size", type=int),
            Option("empirical_form", "Use the empirical-Rademacher form of the gap", flag=True, default=False),
        ],
    },
    "rademacher": {
        "help": "Estimate Rademacher complexity on a dataset",
        "options": DATA_OPTIONS + [
            Option("gamma", "RBF kernel width", type=float, default=1.0),
            Option("draws", "Monte-Carlo sign vectors", type=int, default=200),
            Option("exact", "Enumerate every sign vector (N <= 20)", flag=True, default=False),
            Option("seed", "Root seed", type=int, default=0),
            Option("model", "ReluNet model JSON for the network bound"),
        ],
    },
    "oracle": {
        "help": "True calibration errors of a model on an atom table",
        "options": [
            Option("atoms", "Atom table", required=True),
            Option("model", "Model JSON", required=True),
            Option("n", "Sample size for empirical errors", type=int),
            Option("seed", "Root seed", type=int, default=0),
        ],
    },
    "report": {
        "help": "Dispersion of calibration error per frequency bin",
        "options": [
            Option("in", "Records CSV", required=True),
            Option("bins", "Frequency bins lo:hi,lo:hi,...", required=True),
        ],
    },
}


def _options(command: str) -> Dict[str, Option]:
    return {o.key: o for o in COMMANDS[command]["options"]}


def create_parser() -> argparse.ArgumentParser:
    """
    Create and configure the argument parser for the CLI.

    Returns:
        Configured ArgumentParser instance.
    """
    parser = MulticalArgumentParser(
        description="Multicalibration error, sample-complexity bounds and calibration sweeps",
        prog="multical",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    for name, command in COMMANDS.items():
        sub = subparsers.add_parser(name, help=command["help"], description=command["help"])
        sub.add_argument("--config", help="Flat key=value config file")
        sub.add_argument("--verbose", action="store_true", help="Debug logging")
        sub.add_argument("--json", action="store_true", help="Emit one JSON object")
        for option in _options(name).values():
            option.add_to(sub)
    return parser


def resolve_settings(command: str, args: argparse.Namespace) -> Dict[str, Any]:
    """
    Merge defaults, preset, config file, flags and environment.

    Raises:
        ConfigError: If the config file is malformed or names an unknown key
        UsageError: If a value does not parse or a required setting is missing
    """
    options = _options(command)
    flags = {k: v for k, v in vars(args).items() if k in options}
    file_values = load_config(args.config, allowed=options) if args.config else {}
    preset_name = flags.get("preset") or file_values.get("preset")
    preset = {k: v for k, v in get_preset(preset_name).items() if k in options}
    if preset_name and "group_values" in options and "group_values" not in preset and "g1" in preset:
        preset["group_values"] = f"{preset['g1']},{preset['g2']}"
    defaults = {o.key: o.default for o in options.values()}
    merged = merge_settings(defaults, preset, file_values, flags)
    settings = {key: options[key].convert(value) for key, value in merged.items()}
    if "workers" in options:
        env_workers = workers_from_env()
        if env_workers is not None:
            settings["workers"] = env_workers
    missing = [o.flag_name for o in options.values() if o.required and settings.get(o.key) is None]
    if missing:
        raise UsageError(f"Missing required option(s): {', '.join(missing)}")
    return settings


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def emit(data: Any, as_json: bool, text: str) -> None:
    print(dumps_json(data).rstrip("\n") if as_json else text)


def _source(s: Dict[str, Any]) -> DatasetSource:
    return DatasetSource(
        path=s["input"],
        format=s["format"],
        label_column=s["label_column"],
        positive_label=s["positive_label"],
        negative_label=s.get("negative_label"),
        protected_column=s["protected_column"],
        group_values=s.get("group_values") or "",
        feature_columns=s.get("feature_columns") or "",
        n=s.get("n"),
    )


def _window(s: Dict[str, Any]):
    lo, hi = s.get("train_size_min"), s.get("train_size_max")
    if lo is None and hi is None:
        return None
    return (float("-inf") if lo is None else lo, float("inf") if hi is None else hi)


def _plan(s: Dict[str, Any]) -> SplitPlan:
    return SplitPlan(
        v1=s["v1"],
        v2=s["v2"],
        reps=s["reps"],
        seed=s["seed"],
        augment_with_others=s["augment_with_others"],
        train_size_window=_window(s),
    )


def _trainer_params(s: Dict[str, Any]) -> Dict[str, Any]:
    return {o.key: s.get(o.key) for o in TRAINER_OPTIONS if s.get(o.key) is not None}


def _fmt(value: Optional[float]) -> str:
    return "null" if value is None else f"{value:.6g}"


# =============================================================================
# Command handlers
# =============================================================================

def cmd_ingest(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'ingest' command."""
    source = _source(s)
    source.validate()
    ds = source.load(0)
    write_dataset_csv(ds, s["out"])
    counts = group_counts(ds)
    summary = {"examples": ds.n_examples, "dim": ds.dim, "groups": counts, "out": s["out"]}
    text = "\n".join(
        [f"Ingested {ds.n_examples} examples with {ds.dim} features into {s['out']}"]
        + [f"  {g}: {c}" for g, c in counts.items()]
    )
    emit(summary, as_json, text)
    return EXIT_OK


def cmd_split(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'split' command."""
    plan = _plan(s)
    source = _source(s)
    if not source.group_values:
        source.group_values = [s["g1"], s["g2"]]
    source.validate()
    plan.validate()
    ds = source.load(plan.seed)
    grid = split_grid(ds, s["g1"], s["g2"], plan)
    window = plan.train_size_window
    kept = [c for c in grid if window is None or window[0] <= c.train_size <= window[1]]
    summary = {
        "splits": plan.n_splits,
        "in_window": len(kept) * plan.reps,
        "grid": [
            {"z1": c.z1, "z2": c.z2, "train_size": c.train_size, "test_size": c.test_size}
            for c in grid
        ],
    }
    if not s["dry_run"] and s.get("out"):
        splits = enumerate_splits(ds, s["g1"], s["g2"], plan)
        if window is not None:
            splits = filter_by_train_size(splits, window)
        manifest = {
            "plan": plan.to_dict(),
            "splits": [
                {
                    "z1": sp.z1,
                    "z2": sp.z2,
                    "rep": sp.rep,
                    "split_seed": sp.split_seed,
                    "train_indices": sp.train_indices.tolist(),
                }
                for sp in splits
            ],
        }
        save_json(s["out"], manifest)
        summary["out"] = s["out"]
    lines = [f"{'z1':>7} {'z2':>7} {'train':>8} {'test':>8}"]
    lines += [f"{c.z1:>7} {c.z2:>7} {c.train_size:>8} {c.test_size:>8}" for c in grid]
    lines.append(f"{summary['splits']} splits, {summary['in_window']} within the train-size window")
    emit(summary, as_json, "\n".join(lines))
    return EXIT_OK


def cmd_train(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'train' command."""
    source = _source(s)
    source.validate()
    kind = ModelKind.parse(s["model"])
    cfg = make_config(kind, _trainer_params(s), task_seed(s["seed"], kind))
    cfg.validate()
    ds = source.load(s["seed"])
    model = train(kind, ds, cfg)
    save_model(model, s["out"])
    summary = {
        "kind": kind.value,
        "train_accuracy": accuracy(model, ds),
        "degenerate": model.degenerate,
        "out": s["out"],
    }
    emit(summary, as_json, f"Trained {kind.value}: train accuracy {summary['train_accuracy']:.4f}, saved to {s['out']}")
    return EXIT_OK


def cmd_sweep(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'sweep' command; SIGINT drains in-flight tasks and writes partial records."""
    cfg = SweepConfig(
        source=_source(s),
        g1=s["g1"],
        g2=s["g2"],
        plan=_plan(s),
        model_kinds=s["models"],
        output=s["out"],
        trainer_params=_trainer_params(s),
        dataset_id=s.get("dataset_id") or "",
        workers=s["workers"],
    )
    stop_event = threading.Event()
    previous = None
    if threading.current_thread() is threading.main_thread():
        def request_stop(signum, frame):
            logger.warning("Interrupt received; draining running tasks")
            stop_event.set()
        previous = signal.signal(signal.SIGINT, request_stop)
    try:
        result = run_sweep(cfg, stop_event=stop_event)
    finally:
        if previous is not None:
            signal.signal(signal.SIGINT, previous)
    summary = {
        "records": len(result.records),
        "failures": result.failures,
        "interrupted": result.interrupted,
        "sha256": result.sha256,
        "out": cfg.output,
    }
    text = f"Wrote {summary['records']} records ({result.failures} failures) to {cfg.output}"
    if result.interrupted:
        text += " (interrupted)"
    emit(summary, as_json, text)
    return EXIT_OK if result.ok else EXIT_RUNTIME


def _require(s: Dict[str, Any], *keys: str) -> None:
    missing = [key_to_flag(k) for k in keys if s.get(k) is None]
    if missing:
        raise UsageError(f"--formula {s['formula']} needs {', '.join(missing)}")


def _fairness(s: Dict[str, Any]) -> FairnessParams:
    _require(s, "epsilon", "delta", "gamma", "psi")
    return FairnessParams(s["epsilon"], s["delta"], s["gamma"], s["psi"], s["num_groups"], s["num_labels"])


def _d_vc(s: Dict[str, Any]) -> int:
    if s.get("d_vc") is None and s.get("dim") is not None:
        return linear_vc_dimension(s["dim"])
    _require(s, "d_vc")
    return s["d_vc"]


def _has_fairness(s: Dict[str, Any]) -> bool:
    return s.get("gamma") is not None or s.get("psi") is not None


def _bound(s: Dict[str, Any]) -> Dict[str, Any]:
    formula = s["formula"]
    if formula == "main":
        erm = s["erm_class"]
        if erm == "vc":
            m = vc_group_complexity(_d_vc(s), s["leading_const"])
            extra = {"erm_class": erm, "d_vc": _d_vc(s), "leading_const": s["leading_const"]}
        elif erm == "kernel":
            _require(s, "b_sq", "lambda")
            m = kernel_group_complexity(s["b_sq"], s["lambda"])
            extra = {"erm_class": erm, "B_sq": s["b_sq"], "lambda_margin": s["lambda"]}
        else:
            _require(s, "d_max", "frobenius_x", "spectral", "two_one")
            m = relu_group_complexity(s["d_max"], s["frobenius_x"], s["spectral"], s["two_one"])
            extra = {"erm_class": erm, "d_max": s["d_max"], "frobenius_X": s["frobenius_x"]}
        return multicalibration_from_erm(m, _fairness(s), extra).to_dict()
    if formula == "vc":
        return vc_multicalibration_bound(_d_vc(s), _fairness(s), s["leading_const"]).to_dict()
    if formula == "kernel":
        _require(s, "b_sq", "lambda")
        if _has_fairness(s):
            return kernel_multicalibration_bound(s["b_sq"], s["lambda"], _fairness(s)).to_dict()
        _require(s, "epsilon", "delta")
        samples = kernel_erm_sample_complexity(s["b_sq"], s["lambda"], s["epsilon"], s["delta"])
        inputs = {"B_sq": s["b_sq"], "lambda_margin": s["lambda"], "epsilon": s["epsilon"], "delta": s["delta"]}
        return {"formula_id": "kernel-erm", "inputs": inputs, "samples": samples}
    if formula == "relu":
        _require(s, "d_max", "frobenius_x", "spectral", "two_one")
        norms = (s["spectral"], s["two_one"])
        if _has_fairness(s):
            return relu_multicalibration_bound(norms, s["d_max"], s["frobenius_x"], _fairness(s)).to_dict()
        _require(s, "epsilon", "delta")
        samples = relu_erm_sample_complexity(
            s["d_max"], s["frobenius_x"], s["spectral"], s["two_one"], s["epsilon"], s["delta"]
        )
        inputs = {
            "d_max": s["d_max"], "frobenius_X": s["frobenius_x"], "spectral": s["spectral"],
            "two_one": s["two_one"], "epsilon": s["epsilon"], "delta": s["delta"],
        }
        return {"formula_id": "relu-erm", "inputs": inputs, "samples": samples}
    if formula == "hard-margin":
        _require(s, "diameter", "rho")
        return hard_margin_multicalibration_bound(s["diameter"], s["rho"], _fairness(s), s["leading_const"]).to_dict()
    if formula == "gap":
        _require(s, "rademacher", "n", "delta")
        value = two_sided_generalization_gap(s["rademacher"], s["loss_bound"], s["n"], s["delta"], s["empirical_form"])
        inputs = {
            "rademacher": s["rademacher"], "loss_bound_c": s["loss_bound"], "n": s["n"],
            "delta": s["delta"], "empirical_form": s["empirical_form"],
        }
        return {"formula_id": "gap", "inputs": inputs, "value": value}
    _require(s, "gamma", "delta")
    samples = group_occupancy_threshold(s["num_groups"], s["gamma"], s["delta"])
    inputs = {"num_groups": s["num_groups"], "gamma": s["gamma"], "delta": s["delta"]}
    return {"formula_id": "occupancy", "inputs": inputs, "samples": samples}


def cmd_bounds(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'bounds' command; prints the sample count (or the gap value)."""
    result = _bound(s)
    text = repr(result["value"]) if "value" in result else str(result["samples"])
    emit(result, as_json, text)
    return EXIT_OK


def cmd_rademacher(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'rademacher' command."""
    source = _source(s)
    source.validate()
    ds = source.load(s["seed"])
    K = build_rbf_kernel_matrix(ds, s["gamma"])
    estimate = kernel_rademacher_exact_sup(K, s["draws"], s["seed"], exact=True if s["exact"] else None)
    closed_form = kernel_rademacher_closed_form_bound(K.B_sq, K.n)
    summary: Dict[str, Any] = {
        "n": K.n,
        "B_sq": K.B_sq,
        "kernel": estimate.to_dict(),
        "kernel_closed_form": closed_form,
    }
    lines = [
        f"RBF kernel (gamma={s['gamma']}): {estimate.mean:.6g} +- {estimate.std_error:.2g}"
        f" ({'exact' if estimate.exact else f'{estimate.draws} draws'})",
        f"closed-form bound: {closed_form:.6g}",
    ]
    if s.get("model"):
        model = load_model(s["model"])
        inputs = relu_bound_inputs(model, ds)
        relu_bound = relu_rademacher_closed_form_bound(
            inputs.n, inputs.d_max, inputs.frobenius_X, inputs.spectral, inputs.two_one
        )
        summary["relu_inputs"] = inputs.to_dict()
        summary["relu_closed_form"] = relu_bound
        lines.append(f"ReLU network bound: {relu_bound:.6g}")
    emit(summary, as_json, "\n".join(lines))
    return EXIT_OK


def cmd_oracle(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'oracle' command."""
    dist = load_atom_table(s["atoms"])
    model = load_model(s["model"])
    ds = sample(dist, s["n"], s["seed"]) if s.get("n") else None
    rows = []
    for cat, true_error in true_category_errors(dist, model):
        row = {"group": cat.group, "predicted_label": cat.predicted_label, "true_error": true_error}
        if ds is not None:
            empirical = empirical_calibration_error(model, ds, Category(cat.group, cat.predicted_label))
            row["empirical_error"] = empirical
            row["gap"] = None if empirical is None or true_error is None else abs(true_error - empirical)
        rows.append(row)
    header = f"{'group':<12} {'label':>5} {'true':>10}" + (f" {'empirical':>10} {'gap':>10}" if ds is not None else "")
    lines = [header]
    for row in rows:
        line = f"{row['group']:<12} {row['predicted_label']:>5} {_fmt(row['true_error']):>10}"
        if ds is not None:
            line += f" {_fmt(row['empirical_error']):>10} {_fmt(row['gap']):>10}"
        lines.append(line)
    emit({"categories": rows}, as_json, "\n".join(lines))
    return EXIT_OK


def cmd_report(s: Dict[str, Any], as_json: bool) -> int:
    """Handle the 'report' command."""
    bins = parse_bins(s["bins"])
    summaries = dispersion_summary(load_records(s["in"]), bins)
    lines = [f"{'bin':<20} {'count':>7} {'mean|err|':>10} {'p90|err|':>10}"]
    for b in summaries:
        label = f"{b.lo:g}:{b.hi:g}"
        lines.append(f"{label:<20} {b.count:>7} {_fmt(b.mean_abs_error):>10} {_fmt(b.p90_abs_error):>10}")
    emit({"bins": [b.to_dict() for b in summaries]}, as_json, "\n".join(lines))
    return EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
    "rademacher": cmd_rademacher,
    "oracle": cmd_oracle,
    "report": cmd_report,
}


def report_error(error: Exception) -> None:
    code = getattr(error, "code", "runtime_error")
    message = " ".join(str(error).split())
    print(f"code={code}, msg={message}", file=sys.stderr)


def main(argv=None) -> int:
    """
    Main entry point for the CLI application.

    Args:
        argv: Command-line arguments (for testing).

    Returns:
        Exit code (0 success, 1 invalid input, 2 runtime failure).
    """
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return EXIT_INVALID
        configure_logging(args.verbose)
        settings = resolve_settings(args.command, args)
        return HANDLERS[args.command](settings, args.json)
    except RUNTIME_ERRORS as e:
        report_error(e)
        return EXIT_RUNTIME
    except (MulticalError, ConfigError) as e:
        report_error(e)
        return EXIT_INVALID
    except Exception as e:
        logger.exception("Unexpected failure in %s", argv)
        report_error(e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

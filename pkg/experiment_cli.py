"""
DendSOM Experiment Runner

Configuration-driven runner for the classification and continual-learning
experiments, hyperparameter sweeps, decay-curve export and dataset download.

Usage:
    uv run dendsom fetch-data --dataset mnist
    uv run dendsom scenario --config configs/mnist_classification.ini
    uv run dendsom scenario --config configs/split_mnist_class_il.ini --trials 3
    uv run dendsom sweep --config configs/mnist_classification.ini \\
        --parameter alpha0 --values 0.1,0.3,0.5,0.7,0.95
    uv run dendsom train --config configs/mnist_classification.ini --model-out model.json
    uv run dendsom eval --model model.json --predictions predictions.csv
    uv run dendsom schedule --lambdas 1000,5000,10000 --steps 6000 --out decay.csv
"""

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from cl_protocols import (
    ScenarioResult,
    evaluate,
    make_split,
    predict_records,
    run_scenario,
    write_curves_csv,
)
from data_fetch import DatasetFetcher
from datasets import DATASET_NAMES, LabeledDataset, load_dataset, missing_files, shuffle
from dendsom import DendSomModel
from experiment_config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_override,
    provenance_lines,
    strip_provenance,
)
from model_io import load_model, save_model
from som_core import DecaySchedule, decay_curve

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REPORT_HEADER = ("trial", "seed", "accuracy", "seconds")
SWEEP_HEADER = ("value", "mean", "std")

# Sweep parameter name -> configuration keys it sets
SWEEP_PARAMETERS = {
    "alpha0": ("schedule.alpha0",),
    "alpha_crit": ("schedule.alpha_crit",),
    "r_exp": ("schedule.r_exp",),
    "lambda": ("schedule.lambda",),
    "sigma0": ("schedule.sigma0",),
    "patch_size": ("model.patch_rows", "model.patch_cols"),
    "units_per_map": ("model.units_rows", "model.units_cols"),
    "bmu_rule": ("model.bmu_rule",),
    "model_kind": ("model.kind",),
}


@dataclass(frozen=True)
class TrialRow:
    """One trial of a report; wall-clock seconds do not take part in equality"""

    trial: int
    seed: int
    accuracy: float
    seconds: float = field(compare=False)


@dataclass
class TrialReport:
    """
    Per-trial accuracies of one configuration and their aggregate

    Args:
        config: Resolved configuration the trials ran with
        trials: One row per trial, ordered by trial index
        scenario_results: Full continual-learning results per trial, if any
    """

    config: ExperimentConfig
    trials: list[TrialRow]
    scenario_results: list[dict[str, Any]] = field(default_factory=list, compare=False)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash

    @property
    def accuracies(self) -> list[float]:
        return [row.accuracy for row in self.trials]

    @property
    def mean(self) -> float:
        return aggregate(self.accuracies)[0]

    @property
    def std(self) -> float:
        return aggregate(self.accuracies)[1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "config": self.config.to_sections(),
            "trials": [
                {
                    "trial": row.trial,
                    "seed": row.seed,
                    "accuracy": row.accuracy,
                    "seconds": row.seconds,
                }
                for row in self.trials
            ],
            "mean": self.mean,
            "std": self.std,
            "scenario_results": self.scenario_results,
        }


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """
    Mean and sample standard deviation (divisor N-1)

    A single value has standard deviation 0.
    """
    if not values:
        raise ValueError("Cannot aggregate an empty list of trials")
    array = np.asarray(values, dtype=np.float64)
    std = float(np.std(array, ddof=1)) if len(array) > 1 else 0.0
    return float(np.mean(array)), std


@lru_cache(maxsize=8)
def _cached_split(name: str, split: str, data_dir: str, grayscale: str) -> LabeledDataset:
    return load_dataset(name, split, data_dir, grayscale)


def load_split(config: ExperimentConfig, split: str) -> LabeledDataset:
    return _cached_split(config.dataset, split, config.data_dir, config.grayscale)


def check_data(config: ExperimentConfig):
    """
    Raises:
        FileNotFoundError: If any dataset file of the configuration is absent
    """
    missing = missing_files(config.dataset, config.data_dir)
    if missing:
        listing = ", ".join(str(path) for path in missing)
        raise FileNotFoundError(
            f"Missing {config.dataset} files: {listing}. "
            f"Run 'dendsom fetch-data --dataset {config.dataset}' first"
        )


def build_model(config: ExperimentConfig, n_labels: int, seed) -> DendSomModel:
    """Fresh model for the configuration with seeded weights"""
    return DendSomModel.create(
        config.tiling(),
        config.units_rows,
        config.units_cols,
        n_labels,
        config.schedule(),
        seed,
        bmu_rule=config.bmu_rule,
        neighborhood=config.neighborhood,
    )


def trial_seeds(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent streams for weight initialization and sample order"""
    init_seed, order_seed = np.random.SeedSequence(seed).spawn(2)
    return init_seed, order_seed


def train_classifier(config: ExperimentConfig, seed: int) -> DendSomModel:
    """Single shuffled pass over the training split"""
    init_seed, order_seed = trial_seeds(seed)
    train = load_split(config, "train")
    n_labels = int(train.labels.max()) + 1
    model = build_model(config, n_labels, init_seed)
    stream = shuffle(train, order_seed)
    return model.fit(
        stream.images, stream.labels, n_iter=config.n_iter, log_every=config.log_every
    )


def run_trial(
    config: ExperimentConfig, trial: int
) -> tuple[TrialRow, Optional[ScenarioResult]]:
    """One seeded trial: classification or a continual-learning scenario"""
    seed = config.base_seed + trial
    started = time.perf_counter()
    result = None

    if config.scenario == "classification":
        model = train_classifier(config, seed)
        accuracy = evaluate(model, load_split(config, "test"), epsilon=config.pmi_epsilon)
    else:
        init_seed, order_seed = trial_seeds(seed)
        result = run_scenario(
            lambda n_labels: build_model(config, n_labels, init_seed),
            make_split(load_split(config, "train")),
            config.scenario,
            make_split(load_split(config, "test")),
            seed=order_seed,
            n_iter_per_task=config.n_iter,
            epsilon=config.pmi_epsilon,
            task_il_distribution=config.task_il_distribution,
        )
        accuracy = result.final_accuracy

    seconds = time.perf_counter() - started
    logger.info(
        f"Trial {trial} (seed {seed}) of {config.name}: accuracy {accuracy:.4f} "
        f"in {seconds:.1f}s"
    )
    return TrialRow(trial, seed, accuracy, seconds), result


def _run_trial_job(job: tuple[ExperimentConfig, int]):
    config, trial = job
    return run_trial(config, trial)


def run_experiment(config: ExperimentConfig) -> TrialReport:
    """
    Run n_trials seeded trials of a configuration

    Trial j uses seed base_seed + j. With workers > 1 trials run in separate
    processes; rows are ordered by trial index either way.
    """
    check_data(config)
    jobs = [(config, trial) for trial in range(config.n_trials)]
    workers = min(config.workers, config.n_trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_trial_job, jobs))
    else:
        outcomes = [_run_trial_job(job) for job in jobs]

    rows = [row for row, _ in outcomes]
    results = [result.to_dict() for _, result in outcomes if result is not None]
    return TrialReport(config=config, trials=rows, scenario_results=results)


def sweep_configs(
    config: ExperimentConfig, parameter: str, values: Sequence[Any]
) -> list[ExperimentConfig]:
    """One configuration per sweep value, everything else held fixed"""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"Unknown sweep parameter '{parameter}', expected one of {tuple(SWEEP_PARAMETERS)}"
        )
    if not values:
        raise ConfigError("A sweep needs at least one value")
    configs = []
    for value in values:
        overrides = {key: str(value) for key in SWEEP_PARAMETERS[parameter]}
        if parameter == "units_per_map":
            overrides["schedule.sigma0"] = "auto"
        overrides["experiment.name"] = f"{config.name}-{parameter}-{value}"
        configs.append(config.with_overrides(overrides))
    return configs


def run_sweep(
    config: ExperimentConfig,
    parameter: str,
    values: Sequence[Any],
    csv_path: Optional[PathLike] = None,
) -> list[TrialReport]:
    """
    Run one experiment per value of a single parameter

    Every configuration is validated before the first trial starts.
    """
    configs = sweep_configs(config, parameter, values)
    check_data(config)
    reports = []
    for value, swept in zip(values, configs):
        logger.info(f"Sweep {parameter}={value}")
        reports.append(run_experiment(swept))
    if csv_path is not None:
        write_sweep_csv(config, parameter, values, reports, csv_path)
    return reports


def write_sweep_csv(
    config: ExperimentConfig,
    parameter: str,
    values: Sequence[Any],
    reports: Sequence[TrialReport],
    path: PathLike,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for line in provenance_lines(config):
            f.write(line + "\n")
        f.write(f"# sweep.parameter = {parameter}\n")
        writer = csv.writer(f)
        writer.writerow(SWEEP_HEADER)
        for value, report in zip(values, reports):
            writer.writerow([value, repr(report.mean), repr(report.std)])
    return path


def emit_results(report: TrialReport, format: str, path: PathLike) -> Path:
    """
    Write a report as CSV or JSON

    CSV starts with '# section.key = value' provenance lines, then the
    header trial,seed,accuracy,seconds and one row per trial. JSON carries
    the full resolved configuration, the rows and the aggregate.
    """
    if format not in ("csv", "json"):
        raise ValueError(f"Unknown result format '{format}', expected 'csv' or 'json'")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if format == "json":
        with open(path, "w") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
        return path

    with open(path, "w", newline="") as f:
        for line in provenance_lines(report.config):
            f.write(line + "\n")
        writer = csv.writer(f)
        writer.writerow(REPORT_HEADER)
        for row in report.trials:
            writer.writerow([row.trial, row.seed, repr(row.accuracy), repr(row.seconds)])
    return path


def load_report(path: PathLike) -> TrialReport:
    """Parse a report written by emit_results"""
    path = Path(path)
    config = load_config(path, use_environment=False)
    if path.suffix == ".json":
        with open(path) as f:
            data = json.load(f)
        rows = [TrialRow(**row) for row in data["trials"]]
        return TrialReport(config, rows, data.get("scenario_results", []))

    with open(path, newline="") as f:
        table = strip_provenance(f)
    header, *body = table
    if tuple(header) != REPORT_HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    rows = [
        TrialRow(int(trial), int(seed), float(accuracy), float(seconds))
        for trial, seed, accuracy, seconds in body
    ]
    return TrialReport(config, rows)


def report_stem(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / f"{config.name}-{config.config_hash}"


def emit_all(report: TrialReport) -> list[Path]:
    """JSON and CSV report plus per-trial curves for continual-learning runs"""
    stem = report_stem(report.config)
    written = [
        emit_results(report, "json", stem.with_suffix(".json")),
        emit_results(report, "csv", stem.with_suffix(".csv")),
    ]
    for row, result in zip(report.trials, report.scenario_results):
        curves = stem.parent / f"{stem.name}-trial{row.trial}-curves.csv"
        written.append(write_curves_csv(ScenarioResult.from_dict(result), curves))
    return written


def write_decay_curves(
    lambdas: Sequence[float], steps: int, path: PathLike, alpha0: float, sigma0: float
) -> Path:
    """CSV of (lambda, t, alpha, sigma) for each time constant"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("lambda", "t", "alpha", "sigma"))
        for lambda_ in lambdas:
            sched = DecaySchedule(
                alpha0=alpha0, sigma0=sigma0, lambda_=lambda_, alpha_crit=alpha0 / 190
            )
            for t, alpha, sigma in decay_curve(sched, steps):
                writer.writerow([lambda_, t, repr(alpha), repr(sigma)])
    return path


def write_predictions(records, path: PathLike) -> Path:
    """Prediction rows as CSV (scores JSON-encoded) or JSON, chosen by suffix"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        with open(path, "w") as f:
            json.dump([record.to_dict() for record in records], f, indent=2)
        return path
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("sample_id", "true_label", "predicted_label", "scores"))
        for record in records:
            row = record.to_dict()
            writer.writerow(
                [
                    row["sample_id"],
                    row["true_label"],
                    row["predicted_label"],
                    json.dumps(row["scores"], sort_keys=True),
                ]
            )
    return path


# ============================================================================
# COMMAND LINE
# ============================================================================


def print_section(title, symbol="="):
    """Print a formatted section header"""
    print("\n" + symbol * 70)
    print(f" {title}")
    print(symbol * 70)


def _csv_values(text: str) -> list[str]:
    values = [value.strip() for value in text.split(",") if value.strip()]
    if not values:
        raise ConfigError(f"Expected a comma-separated list, got '{text}'")
    return values


def _config_from_args(args) -> ExperimentConfig:
    overrides = dict(parse_override(item) for item in args.set or [])
    flags = {
        "dataset.name": args.dataset,
        "dataset.data_dir": args.data_dir,
        "model.kind": args.model_kind,
        "model.bmu_rule": args.bmu_rule,
        "experiment.scenario": getattr(args, "scenario", None),
        "experiment.n_trials": args.trials,
        "experiment.base_seed": args.seed,
        "experiment.output_dir": args.output_dir,
        "experiment.workers": args.workers,
    }
    overrides.update({key: str(value) for key, value in flags.items() if value is not None})
    return load_config(args.config, overrides)


def _print_report(report: TrialReport):
    print(f"\n📋 {report.config.name} ({report.config_hash})")
    for row in report.trials:
        print(f"   Trial {row.trial} (seed {row.seed}): {100 * row.accuracy:.2f}%  {row.seconds:.1f}s")
    print(f"\n✓ Accuracy: {100 * report.mean:.2f} ± {100 * report.std:.2f}")


def cmd_scenario(args) -> int:
    config = _config_from_args(args)
    print_section(f"Running {config.scenario}: {config.dataset} / {config.kind} / {config.bmu_rule}")
    report = run_experiment(config)
    _print_report(report)
    for path in emit_all(report):
        print(f"📁 {path}")
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    values = _csv_values(args.values)
    print_section(f"Sweeping {args.parameter} over {values}")
    csv_path = args.out or Path(config.output_dir) / f"{config.name}-sweep-{args.parameter}.csv"
    reports = run_sweep(config, args.parameter, values, csv_path)
    for report in reports:
        _print_report(report)
        emit_all(report)
    print(f"\n📁 {csv_path}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    if config.scenario != "classification":
        raise ConfigError(
            "train builds classification models; use 'scenario' for continual-learning runs"
        )
    check_data(config)
    print_section(f"Training {config.kind} on {config.dataset} (seed {config.base_seed})")
    model = train_classifier(config, config.base_seed)
    out = args.model_out or report_stem(config).with_name(
        f"{config.name}-seed{config.base_seed}-model.json"
    )
    save_model(
        model, out, metadata={"config": config.to_sections()}, pmi_epsilon=config.pmi_epsilon
    )
    print(f"✓ Trained on {model.samples_seen} samples")
    print(f"📁 {out}")
    return 0


def cmd_eval(args) -> int:
    model, metadata, pmi_epsilon = load_model(args.model)
    overrides = dict(parse_override(item) for item in args.set or [])
    if args.data_dir:
        overrides["dataset.data_dir"] = args.data_dir
    explicit = {
        f"{section}.{name}": value
        for section, values in metadata.get("config", {}).items()
        for name, value in values.items()
    }
    explicit["model.pmi_epsilon"] = repr(pmi_epsilon)
    explicit.update(overrides)
    config = ExperimentConfig.resolve(explicit)
    check_data(config)

    dataset = load_split(config, args.split)
    candidates = (
        [int(value) for value in _csv_values(args.candidates)]
        if args.candidates
        else list(range(model.n_labels))
    )
    records = predict_records(model, dataset, candidates, epsilon=config.pmi_epsilon)
    accuracy = float(np.mean([r.predicted_label == r.true_label for r in records]))

    print_section(f"Evaluating {args.model} on {config.dataset}/{args.split}")
    print(f"✓ Accuracy: {100 * accuracy:.2f}% over {len(records)} samples")
    if args.predictions:
        print(f"📁 {write_predictions(records, args.predictions)}")
    return 0


def cmd_schedule(args) -> int:
    lambdas = [float(value) for value in _csv_values(args.lambdas)]
    path = write_decay_curves(lambdas, args.steps, args.out, args.alpha0, args.sigma0)
    print(f"📁 {path}")
    return 0


def cmd_fetch(args) -> int:
    names = DATASET_NAMES if args.dataset == "all" else (args.dataset,)
    fetcher = DatasetFetcher(args.data_dir, manifest_path=args.manifest)
    for name in names:
        print_section(f"Fetching {name}")
        for path in fetcher.fetch(name, force=args.force):
            print(f"✓ {path}")
    print(f"\n📁 Checksums recorded in {fetcher.record_path}")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser, with_scenario: bool = True):
    parser.add_argument("--config", help="INI file, or a report to rerun")
    parser.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="Override one setting (repeatable)",
    )
    parser.add_argument("--dataset", choices=DATASET_NAMES)
    parser.add_argument("--data-dir")
    parser.add_argument("--model-kind", choices=("som", "dendsom"))
    parser.add_argument("--bmu-rule", choices=("euclidean", "cosine"))
    if with_scenario:
        parser.add_argument(
            "--scenario", choices=("classification", "task-il", "domain-il", "class-il")
        )
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int, help="Base seed; trial j uses seed + j")
    parser.add_argument("--output-dir")
    parser.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dendsom", description="DendSOM classification and continual-learning experiments"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    verbs = parser.add_subparsers(dest="verb", required=True)

    scenario = verbs.add_parser("scenario", help="Run all trials of an experiment")
    _add_config_flags(scenario)
    scenario.set_defaults(handler=cmd_scenario)

    sweep = verbs.add_parser("sweep", help="Run one experiment per parameter value")
    _add_config_flags(sweep)
    sweep.add_argument("--parameter", required=True, choices=tuple(SWEEP_PARAMETERS))
    sweep.add_argument("--values", required=True, help="Comma-separated values")
    sweep.add_argument("--out", help="Sweep summary CSV")
    sweep.set_defaults(handler=cmd_sweep)

    train = verbs.add_parser("train", help="Train one classification model and save it")
    _add_config_flags(train, with_scenario=False)
    train.add_argument("--model-out", help="Snapshot path")
    train.set_defaults(handler=cmd_train)

    evaluate_parser = verbs.add_parser("eval", help="Evaluate a saved model")
    evaluate_parser.add_argument("--model", required=True, help="Snapshot path")
    evaluate_parser.add_argument("--split", choices=("train", "test"), default="test")
    evaluate_parser.add_argument("--candidates", help="Comma-separated candidate labels")
    evaluate_parser.add_argument("--predictions", help="Write prediction rows (.csv or .json)")
    evaluate_parser.add_argument("--data-dir")
    evaluate_parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    evaluate_parser.set_defaults(handler=cmd_eval)

    schedule = verbs.add_parser("schedule", help="Export learning-rate and radius decay curves")
    schedule.add_argument("--lambdas", default="1000,5000,10000")
    schedule.add_argument("--steps", type=int, default=6000)
    schedule.add_argument("--alpha0", type=float, default=0.95)
    schedule.add_argument("--sigma0", type=float, default=4.0)
    schedule.add_argument("--out", default="results/decay_curves.csv")
    schedule.set_defaults(handler=cmd_schedule)

    fetch = verbs.add_parser("fetch-data", help="Download and verify datasets")
    fetch.add_argument("--dataset", choices=DATASET_NAMES + ("all",), default="all")
    fetch.add_argument("--data-dir", default="data")
    fetch.add_argument(
        "--manifest", help="Pinned checksums (sha256  path lines); defaults to the shipped list"
    )
    fetch.add_argument("--force", action="store_true", help="Download even if present")
    fetch.set_defaults(handler=cmd_fetch)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(args)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"\n❌ Error: {e}", file=sys.stderr)
        payload = {"error": type(e).__name__, "message": str(e), "verb": args.verb}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

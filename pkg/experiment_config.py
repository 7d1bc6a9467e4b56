"""
Experiment Configuration

Loads experiment settings from an INI file with configparser, layers
environment variables (a .env file is honored via python-dotenv) and
command-line overrides on top, and resolves everything into a frozen
ExperimentConfig whose defaults reproduce the published settings for each
dataset.

Resolution order, later wins:
    dataset/scenario defaults -> INI file -> environment -> overrides
"""

import configparser
import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from dotenv import load_dotenv

from dendsom import TilingSpec
from som_core import BmuRule, DecaySchedule, Neighborhood, default_sigma0

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SCENARIOS = ("classification", "task-il", "domain-il", "class-il")
MODEL_KINDS = ("som", "dendsom")
DATASET_IMAGE_SIDE = {"mnist": 28, "fashion": 28, "cifar10": 32}

# Per-dataset settings: sigma0, DendSOM lattice/patch/stride, SOM lattice
DATASET_DEFAULTS = {
    "mnist": {"sigma0": 4.0, "dendsom": (8, 10, 3), "som": 21, "alpha_crit": 0.005},
    "fashion": {"sigma0": 5.0, "dendsom": (10, 8, 4), "som": 18, "alpha_crit": 0.005},
    "cifar10": {"sigma0": 6.0, "dendsom": (12, 4, 2), "som": 29, "alpha_crit": 0.00005},
}

ENVIRONMENT_KEYS = {
    "DENDSOM_DATA_DIR": "dataset.data_dir",
    "DENDSOM_OUTPUT_DIR": "experiment.output_dir",
    "DENDSOM_WORKERS": "experiment.workers",
}

KNOWN_KEYS = {
    "experiment": (
        "name",
        "scenario",
        "n_trials",
        "base_seed",
        "output_dir",
        "workers",
        "n_iter",
        "log_every",
    ),
    "dataset": ("name", "data_dir", "grayscale"),
    "model": (
        "kind",
        "bmu_rule",
        "units_rows",
        "units_cols",
        "patch_rows",
        "patch_cols",
        "stride_rows",
        "stride_cols",
        "neighborhood",
        "pmi_epsilon",
        "task_il_distribution",
    ),
    "schedule": ("alpha0", "sigma0", "lambda", "alpha_crit", "r_exp"),
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration"""


def _defaults(dataset: str, kind: str, scenario: str) -> dict[str, str]:
    if dataset not in DATASET_DEFAULTS:
        raise ConfigError(
            f"Unknown dataset '{dataset}', expected one of {tuple(DATASET_DEFAULTS)}"
        )
    table = DATASET_DEFAULTS[dataset]
    side = DATASET_IMAGE_SIDE[dataset]
    if kind == "som":
        units, patch, stride = table["som"], side, 1
    else:
        units, patch, stride = table["dendsom"]

    return {
        "experiment.name": f"{dataset}-{kind}-{scenario}",
        "experiment.scenario": scenario,
        "experiment.n_trials": "10",
        "experiment.base_seed": "0",
        "experiment.output_dir": "results",
        "experiment.workers": "1",
        "experiment.n_iter": "all",
        "experiment.log_every": "10000",
        "dataset.name": dataset,
        "dataset.data_dir": "data",
        "dataset.grayscale": "luma",
        "model.kind": kind,
        "model.bmu_rule": "cosine",
        "model.units_rows": str(units),
        "model.units_cols": str(units),
        "model.patch_rows": str(patch),
        "model.patch_cols": str(patch),
        "model.stride_rows": str(stride),
        "model.stride_cols": str(stride),
        "model.neighborhood": "linear",
        "model.pmi_epsilon": "1e-09",
        "model.task_il_distribution": "global",
        "schedule.alpha0": "0.95",
        "schedule.sigma0": repr(table["sigma0"]),
        "schedule.lambda": "1000.0",
        "schedule.alpha_crit": repr(table["alpha_crit"]),
        "schedule.r_exp": "1" if scenario == "classification" else "2",
    }


def _check_key(key: str) -> str:
    section, _, name = key.partition(".")
    if section not in KNOWN_KEYS or name not in KNOWN_KEYS[section]:
        raise ConfigError(
            f"Unknown configuration key '{key}'; keys look like 'schedule.alpha0'"
        )
    return key


def parse_override(text: str) -> tuple[str, str]:
    """Split a 'section.key=value' override"""
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"Override '{text}' is not of the form section.key=value")
    return _check_key(key.strip()), value.strip()


def _read_ini(path: Path) -> dict[str, str]:
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if not read:
        raise ConfigError(f"Configuration file not found: {path}")
    raw = {}
    for section in parser.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"Unknown section [{section}] in {path}")
        for name, value in parser[section].items():
            raw[_check_key(f"{section}.{name}")] = value
    return raw


def _read_report_config(path: Path) -> dict[str, str]:
    """Settings embedded in an emitted report (JSON or CSV)"""
    if path.suffix == ".json":
        with open(path) as f:
            sections = json.load(f).get("config")
        if not isinstance(sections, dict):
            raise ConfigError(f"{path} carries no embedded configuration")
        return {
            _check_key(f"{section}.{name}"): str(value)
            for section, values in sections.items()
            for name, value in values.items()
        }

    raw = {}
    with open(path, newline="") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, sep, value = line[1:].partition("=")
            if sep:
                raw[_check_key(key.strip())] = value.strip()
    if not raw:
        raise ConfigError(f"{path} carries no embedded configuration")
    return raw


def read_settings(path: PathLike) -> dict[str, str]:
    """
    Read explicit settings from an INI file or from an emitted report

    Args:
        path: .ini file, or a .json / .csv report written by the runner

    Returns:
        Mapping of "section.key" to raw string values
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")
    if path.suffix in (".json", ".csv"):
        return _read_report_config(path)
    return _read_ini(path)


def environment_settings() -> dict[str, str]:
    load_dotenv()
    return {
        key: os.environ[var] for var, key in ENVIRONMENT_KEYS.items() if os.getenv(var)
    }


def _as_int(raw: dict[str, str], key: str, minimum: Optional[int] = None) -> int:
    try:
        value = int(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got '{raw[key]}'")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be at least {minimum}, got {value}")
    return value


def _as_float(raw: dict[str, str], key: str) -> float:
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got '{raw[key]}'")


def _as_choice(raw: dict[str, str], key: str, choices) -> str:
    value = raw[key].strip().lower()
    if value not in choices:
        raise ConfigError(f"{key} must be one of {tuple(choices)}, got '{raw[key]}'")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings"""

    name: str
    scenario: str
    n_trials: int
    base_seed: int
    output_dir: str
    workers: int
    n_iter: Optional[int]
    log_every: int
    dataset: str
    data_dir: str
    grayscale: str
    kind: str
    bmu_rule: str
    units_rows: int
    units_cols: int
    patch_rows: int
    patch_cols: int
    stride_rows: int
    stride_cols: int
    neighborhood: str
    pmi_epsilon: float
    task_il_distribution: str
    alpha0: float
    sigma0: float
    lambda_: float
    alpha_crit: float
    r_exp: int
    explicit: dict[str, str] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def resolve(cls, explicit: dict[str, str]) -> "ExperimentConfig":
        """
        Fill defaults around explicitly given settings and validate

        Args:
            explicit: "section.key" -> raw string values that override defaults

        Raises:
            ConfigError: On unknown keys, malformed values or invalid combinations
        """
        explicit = {_check_key(k): str(v) for k, v in explicit.items()}
        dataset = explicit.get("dataset.name", "mnist").strip().lower()
        kind = _as_choice(
            {"model.kind": explicit.get("model.kind", "dendsom")}, "model.kind", MODEL_KINDS
        )
        scenario = _as_choice(
            {"experiment.scenario": explicit.get("experiment.scenario", "classification")},
            "experiment.scenario",
            SCENARIOS,
        )
        raw = _defaults(dataset, kind, scenario)
        raw.update(explicit)

        units_rows = _as_int(raw, "model.units_rows", 1)
        units_cols = _as_int(raw, "model.units_cols", 1)
        sigma0_text = raw["schedule.sigma0"].strip().lower()
        sigma0 = (
            default_sigma0(units_rows, units_cols)
            if sigma0_text == "auto"
            else _as_float(raw, "schedule.sigma0")
        )
        n_iter_text = raw["experiment.n_iter"].strip().lower()

        config = cls(
            name=raw["experiment.name"],
            scenario=scenario,
            n_trials=_as_int(raw, "experiment.n_trials", 1),
            base_seed=_as_int(raw, "experiment.base_seed", 0),
            output_dir=raw["experiment.output_dir"],
            workers=_as_int(raw, "experiment.workers", 1),
            n_iter=None if n_iter_text == "all" else _as_int(raw, "experiment.n_iter", 0),
            log_every=_as_int(raw, "experiment.log_every", 0),
            dataset=dataset,
            data_dir=raw["dataset.data_dir"],
            grayscale=_as_choice(raw, "dataset.grayscale", ("luma", "mean")),
            kind=kind,
            bmu_rule=_as_choice(raw, "model.bmu_rule", [r.value for r in BmuRule]),
            units_rows=units_rows,
            units_cols=units_cols,
            patch_rows=_as_int(raw, "model.patch_rows", 1),
            patch_cols=_as_int(raw, "model.patch_cols", 1),
            stride_rows=_as_int(raw, "model.stride_rows", 1),
            stride_cols=_as_int(raw, "model.stride_cols", 1),
            neighborhood=_as_choice(
                raw, "model.neighborhood", [n.value for n in Neighborhood]
            ),
            pmi_epsilon=_as_float(raw, "model.pmi_epsilon"),
            task_il_distribution=_as_choice(
                raw, "model.task_il_distribution", ("global", "per_task")
            ),
            alpha0=_as_float(raw, "schedule.alpha0"),
            sigma0=sigma0,
            lambda_=_as_float(raw, "schedule.lambda"),
            alpha_crit=_as_float(raw, "schedule.alpha_crit"),
            r_exp=_as_int(raw, "schedule.r_exp", 1),
            explicit=explicit,
        )
        config._validate()
        return config

    def _validate(self):
        if self.pmi_epsilon <= 0.0:
            raise ConfigError(f"model.pmi_epsilon must be positive, got {self.pmi_epsilon}")
        if self.kind == "som" and (
            self.patch_rows,
            self.patch_cols,
        ) != self.image_shape:
            raise ConfigError(
                f"A plain SOM sees the whole {self.image_shape} image; "
                f"patch is {self.patch_rows}x{self.patch_cols}"
            )
        try:
            self.tiling()
            self.schedule()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def image_shape(self) -> tuple[int, int]:
        side = DATASET_IMAGE_SIDE[self.dataset]
        return side, side

    def tiling(self) -> TilingSpec:
        rows, cols = self.image_shape
        return TilingSpec(
            rows,
            cols,
            self.patch_rows,
            self.patch_cols,
            self.stride_rows,
            self.stride_cols,
        )

    def schedule(self) -> DecaySchedule:
        """A fresh schedule with the clock at zero"""
        return DecaySchedule(
            alpha0=self.alpha0,
            sigma0=self.sigma0,
            lambda_=self.lambda_,
            alpha_crit=self.alpha_crit,
            r_exp=self.r_exp,
        )

    def to_sections(self) -> dict[str, dict[str, str]]:
        """Canonical INI-shaped view of every resolved setting"""
        values = {
            "experiment": {
                "name": self.name,
                "scenario": self.scenario,
                "n_trials": str(self.n_trials),
                "base_seed": str(self.base_seed),
                "output_dir": self.output_dir,
                "workers": str(self.workers),
                "n_iter": "all" if self.n_iter is None else str(self.n_iter),
                "log_every": str(self.log_every),
            },
            "dataset": {
                "name": self.dataset,
                "data_dir": self.data_dir,
                "grayscale": self.grayscale,
            },
            "model": {
                "kind": self.kind,
                "bmu_rule": self.bmu_rule,
                "units_rows": str(self.units_rows),
                "units_cols": str(self.units_cols),
                "patch_rows": str(self.patch_rows),
                "patch_cols": str(self.patch_cols),
                "stride_rows": str(self.stride_rows),
                "stride_cols": str(self.stride_cols),
                "neighborhood": self.neighborhood,
                "pmi_epsilon": repr(self.pmi_epsilon),
                "task_il_distribution": self.task_il_distribution,
            },
            "schedule": {
                "alpha0": repr(self.alpha0),
                "sigma0": repr(self.sigma0),
                "lambda": repr(self.lambda_),
                "alpha_crit": repr(self.alpha_crit),
                "r_exp": str(self.r_exp),
            },
        }
        return values

    def flat(self) -> dict[str, str]:
        return {
            f"{section}.{name}": value
            for section, values in self.to_sections().items()
            for name, value in values.items()
        }

    @property
    def config_hash(self) -> str:
        """First 16 hex chars of the SHA-256 of the canonical settings"""
        canonical = json.dumps(self.to_sections(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        """Re-resolve with extra explicit settings; defaults follow a changed dataset or kind"""
        merged = dict(self.explicit)
        merged.update({_check_key(k): str(v) for k, v in overrides.items()})
        return ExperimentConfig.resolve(merged)

    def write_ini(self, path: PathLike) -> Path:
        parser = configparser.ConfigParser()
        parser.read_dict(self.to_sections())
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            parser.write(f)
        return path


def load_config(
    path: Optional[PathLike] = None,
    overrides: Optional[dict[str, str]] = None,
    use_environment: bool = True,
) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a file, the environment and overrides

    Args:
        path: INI file or emitted report; defaults only when None
        overrides: "section.key" -> value, applied last
        use_environment: Honor DENDSOM_* variables (and a .env file)
    """
    explicit = read_settings(path) if path else {}
    if use_environment:
        explicit.update(environment_settings())
    for key, value in (overrides or {}).items():
        explicit[_check_key(key)] = str(value)
    config = ExperimentConfig.resolve(explicit)
    logger.debug(f"Resolved configuration {config.config_hash}: {config.flat()}")
    return config


def provenance_lines(config: ExperimentConfig) -> list[str]:
    """'# section.key = value' lines embedding the resolved config in a CSV"""
    return [f"# {key} = {value}" for key, value in config.flat().items()]


def strip_provenance(lines) -> list[list[str]]:
    """CSV rows of a file written with provenance lines, comments removed"""
    return list(csv.reader(line for line in lines if not line.startswith("#")))

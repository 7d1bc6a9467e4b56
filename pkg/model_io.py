"""
Model Snapshots

Versioned JSON snapshots of single SOM grids and full DendSOM models. The
document's "format" field carries the magic string DENDSOM1; weights and
hit counts are stored row-major as nested lists. Floats are written with
their shortest round-tripping repr, so save/load is bit-exact.
Model snapshots also carry the PMI smoothing constant they were trained for.
"""

import json
import logging
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np

from dendsom import DendSomModel, TilingSpec
from pmi_inference import DEFAULT_EPSILON
from som_core import DecaySchedule, SomGrid

logger = logging.getLogger(__name__)

MAGIC = "DENDSOM1"

PathLike = Union[str, Path]


class SnapshotFormatError(ValueError):
    """Snapshot is not a DENDSOM1 document or is internally inconsistent"""


class LoadedModel(NamedTuple):
    model: DendSomModel
    metadata: dict[str, Any]
    pmi_epsilon: float


def schedule_to_dict(sched: DecaySchedule) -> dict[str, Any]:
    return {
        "alpha0": sched.alpha0,
        "sigma0": sched.sigma0,
        "lambda": sched.lambda_,
        "alpha_crit": sched.alpha_crit,
        "r_exp": sched.r_exp,
        "t": sched.t,
    }


def schedule_from_dict(data: dict[str, Any]) -> DecaySchedule:
    return DecaySchedule(
        alpha0=float(data["alpha0"]),
        sigma0=float(data["sigma0"]),
        lambda_=float(data["lambda"]),
        alpha_crit=float(data["alpha_crit"]),
        r_exp=int(data["r_exp"]),
        t=int(data["t"]),
    )


def grid_to_dict(grid: SomGrid, sched: DecaySchedule) -> dict[str, Any]:
    """Snapshot of one SOM grid and its schedule"""
    return {
        "format": MAGIC,
        "kind": "som_grid",
        "rows": grid.rows,
        "cols": grid.cols,
        "dim": grid.dim,
        "weights": grid.weights.tolist(),
        "schedule": schedule_to_dict(sched),
    }


def grid_from_dict(data: dict[str, Any]) -> tuple[SomGrid, DecaySchedule]:
    _check_magic(data, "som_grid")
    try:
        grid = SomGrid(
            rows=int(data["rows"]),
            cols=int(data["cols"]),
            dim=int(data["dim"]),
            weights=np.array(data["weights"], dtype=np.float64),
        )
        return grid, schedule_from_dict(data["schedule"])
    except (KeyError, TypeError, ValueError) as e:
        raise SnapshotFormatError(f"Invalid grid snapshot: {e}") from e


def model_to_dict(
    model: DendSomModel,
    metadata: Optional[dict[str, Any]] = None,
    pmi_epsilon: float = DEFAULT_EPSILON,
) -> dict[str, Any]:
    """
    Snapshot of a DendSOM model

    Args:
        model: Model to serialize
        metadata: Free-form provenance (typically the resolved experiment config)
        pmi_epsilon: Smoothing constant the model is meant to be scored with
    """
    tiling = model.tiling
    return {
        "format": MAGIC,
        "kind": "dendsom",
        "rows": model.units_rows,
        "cols": model.units_cols,
        "dim": tiling.patch_dim,
        "tiling": {
            "image_rows": tiling.image_rows,
            "image_cols": tiling.image_cols,
            "patch_rows": tiling.patch_rows,
            "patch_cols": tiling.patch_cols,
            "stride_rows": tiling.stride_rows,
            "stride_cols": tiling.stride_cols,
        },
        "n_labels": model.n_labels,
        "bmu_rule": model.bmu_rule.value,
        "neighborhood": model.neighborhood.value,
        "schedule": schedule_to_dict(model.schedule),
        "pmi_epsilon": pmi_epsilon,
        "weights": model.weights.tolist(),
        "hits": model.hits.tolist(),
        "metadata": metadata or {},
    }


def model_from_dict(data: dict[str, Any]) -> DendSomModel:
    _check_magic(data, "dendsom")
    try:
        tiling = TilingSpec(**{k: int(v) for k, v in data["tiling"].items()})
        if int(data["dim"]) != tiling.patch_dim:
            raise SnapshotFormatError(
                f"dim={data['dim']} disagrees with tiling patch length {tiling.patch_dim}"
            )
        model = DendSomModel(
            tiling=tiling,
            units_rows=int(data["rows"]),
            units_cols=int(data["cols"]),
            n_labels=int(data["n_labels"]),
            schedule=schedule_from_dict(data["schedule"]),
            weights=np.array(data["weights"], dtype=np.float64),
            bmu_rule=data["bmu_rule"],
            neighborhood=data["neighborhood"],
            hits=np.array(data["hits"], dtype=np.int64),
        )
    except SnapshotFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SnapshotFormatError(f"Invalid model snapshot: {e}") from e

    totals = model.hits.sum(axis=(1, 2))
    if len(set(totals.tolist())) > 1:
        raise SnapshotFormatError(
            f"Hit matrices disagree on the number of samples seen: {sorted(set(totals.tolist()))}"
        )
    return model


def snapshot_epsilon(data: dict[str, Any]) -> float:
    """PMI smoothing constant stored with a model; older snapshots get the default"""
    try:
        epsilon = float(data.get("pmi_epsilon", DEFAULT_EPSILON))
    except (TypeError, ValueError) as e:
        raise SnapshotFormatError(f"Invalid pmi_epsilon: {e}") from e
    if not epsilon > 0.0:
        raise SnapshotFormatError(f"pmi_epsilon must be positive, got {epsilon}")
    return epsilon


def _check_magic(data: Any, kind: str):
    if not isinstance(data, dict) or data.get("format") != MAGIC:
        found = data.get("format") if isinstance(data, dict) else type(data).__name__
        raise SnapshotFormatError(f"Not a {MAGIC} snapshot (format={found!r})")
    if data.get("kind") != kind:
        raise SnapshotFormatError(
            f"Snapshot holds a {data.get('kind')!r}, expected {kind!r}"
        )


def save_model(
    model: DendSomModel,
    path: PathLike,
    metadata: Optional[dict[str, Any]] = None,
    pmi_epsilon: float = DEFAULT_EPSILON,
) -> Path:
    """Write a model snapshot to path, creating parent directories"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(model_to_dict(model, metadata, pmi_epsilon), f)
    logger.info(f"Model snapshot saved to {path}")
    return path


def load_model(path: PathLike) -> LoadedModel:
    """
    Read a model snapshot

    Returns:
        The model, the metadata stored with it and its PMI smoothing constant
    """
    with open(path, "r") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SnapshotFormatError(f"{path} is not valid JSON: {e}") from e
    model = model_from_dict(data)
    return LoadedModel(model, data.get("metadata", {}), snapshot_epsilon(data))


def save_grid(grid: SomGrid, sched: DecaySchedule, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(grid_to_dict(grid, sched), f)
    return path


def load_grid(path: PathLike) -> tuple[SomGrid, DecaySchedule]:
    with open(path, "r") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SnapshotFormatError(f"{path} is not valid JSON: {e}") from e
    return grid_from_dict(data)

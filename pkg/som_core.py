"""
SOM Core

Single-map primitives: lattice geometry, the two best-matching-unit rules,
decay schedules, the neighborhood kernel and the weight update step.

The batched kernels at the bottom operate on a stack of equally shaped maps
and are what the DendSOM layer uses; the single-map functions are thin
wrappers over them so both paths share tie-breaking and arithmetic.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

# Initial weights are drawn from U[0, INIT_HIGH)
INIT_HIGH = 0.1


class BmuRule(str, Enum):
    """Best-matching-unit selection rule"""

    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


class Neighborhood(str, Enum):
    """
    Denominator of the neighborhood kernel exponent.

    LINEAR divides the squared lattice distance by 2*sigma, GAUSSIAN by 2*sigma**2.
    """

    LINEAR = "linear"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class UnitIndex:
    """Address of one lattice unit, both as a linear index and as (row, col)"""

    linear: int
    row: int
    col: int

    @classmethod
    def from_linear(cls, linear: int, cols: int) -> "UnitIndex":
        row, col = divmod(int(linear), cols)
        return cls(linear=int(linear), row=row, col=col)

    @classmethod
    def from_coords(cls, row: int, col: int, cols: int) -> "UnitIndex":
        if not 0 <= col < cols:
            raise ValueError(f"Column {col} outside lattice of width {cols}")
        return cls(linear=row * cols + col, row=row, col=col)


def lattice_positions(rows: int, cols: int) -> np.ndarray:
    """
    Enumerate lattice coordinates in row-major order

    Returns:
        Integer array of shape (rows*cols, 2) holding (row, col) per unit
    """
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def lattice_sq_distances(rows: int, cols: int) -> np.ndarray:
    """Squared lattice distance between every pair of units, shape (U, U)"""
    positions = lattice_positions(rows, cols)
    delta = positions[:, None, :] - positions[None, :, :]
    return (delta**2).sum(axis=-1).astype(np.float64)


@dataclass
class SomGrid:
    """
    One self-organizing map: a rows x cols lattice with a weight vector per unit

    Args:
        rows: Lattice height (U1)
        cols: Lattice width (U2)
        dim: Length of each weight vector (k)
        weights: Array of shape (rows*cols, dim), row-major over the lattice
    """

    rows: int
    cols: int
    dim: int
    weights: np.ndarray
    positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.dim < 1:
            raise ValueError(
                f"Grid shape must be positive, got rows={self.rows}, "
                f"cols={self.cols}, dim={self.dim}"
            )
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = (self.rows * self.cols, self.dim)
        if self.weights.shape != expected:
            raise ValueError(
                f"Weights have shape {self.weights.shape}, expected {expected}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Weights contain non-finite entries")
        self.positions = lattice_positions(self.rows, self.cols)

    @property
    def n_units(self) -> int:
        return self.rows * self.cols

    @classmethod
    def random(
        cls, rows: int, cols: int, dim: int, rng: np.random.Generator
    ) -> "SomGrid":
        """Create a grid with i.i.d. U[0, 0.1) weights drawn from rng"""
        weights = rng.uniform(0.0, INIT_HIGH, size=(rows * cols, dim))
        return cls(rows=rows, cols=cols, dim=dim, weights=weights)

    def unit(self, linear: int) -> UnitIndex:
        if not 0 <= linear < self.n_units:
            raise ValueError(f"Unit {linear} outside grid of {self.n_units} units")
        return UnitIndex.from_linear(linear, self.cols)


@dataclass
class DecaySchedule:
    """
    Shared training clock and the exponential decay parameters

    Args:
        alpha0: Initial learning rate, in (0, 1]
        sigma0: Initial neighborhood radius
        lambda_: Time constant of both decays
        alpha_crit: Learning rate at which the clock is rewound
        r_exp: Rewind divisor applied to the clock
        t: Current training step
    """

    alpha0: float
    sigma0: float
    lambda_: float
    alpha_crit: float
    r_exp: int = 1
    t: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        if self.sigma0 <= 0.0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.lambda_ <= 0.0:
            raise ValueError(f"lambda must be positive, got {self.lambda_}")
        if not 0.0 < self.alpha_crit < self.alpha0:
            raise ValueError(
                f"alpha_crit must lie in (0, alpha0={self.alpha0}), got {self.alpha_crit}"
            )
        if int(self.r_exp) != self.r_exp or self.r_exp < 1:
            raise ValueError(f"r_exp must be a positive integer, got {self.r_exp}")
        if self.t < 0:
            raise ValueError(f"Training step must be non-negative, got {self.t}")
        self.r_exp = int(self.r_exp)
        # fails early when the rewind period rounds down to zero
        _ = self.iter_crit

    @property
    def iter_crit(self) -> int:
        return iter_crit(self.alpha0, self.alpha_crit, self.lambda_)

    def copy(self) -> "DecaySchedule":
        return DecaySchedule(
            alpha0=self.alpha0,
            sigma0=self.sigma0,
            lambda_=self.lambda_,
            alpha_crit=self.alpha_crit,
            r_exp=self.r_exp,
            t=self.t,
        )


def iter_crit(alpha0: float, alpha_crit: float, lambda_: float) -> int:
    """
    Number of steps until the learning rate decays to alpha_crit

    Returns:
        floor(lambda * ln(alpha0 / alpha_crit))

    Raises:
        ValueError: If the period is not a positive integer
    """
    period = math.floor(lambda_ * math.log(alpha0 / alpha_crit))
    if period < 1:
        raise ValueError(
            f"iter_crit={period} for alpha0={alpha0}, alpha_crit={alpha_crit}, "
            f"lambda={lambda_}; it must be at least 1"
        )
    return period


def default_sigma0(rows: int, cols: int) -> float:
    """Radius heuristic: half the longer lattice side"""
    return max(rows, cols) / 2


def learning_rate(sched: DecaySchedule) -> float:
    return sched.alpha0 * math.exp(-sched.t / sched.lambda_)


def neighborhood_radius(sched: DecaySchedule) -> float:
    return sched.sigma0 * math.exp(-sched.t / sched.lambda_)


def decay_curve(sched: DecaySchedule, steps: int) -> list[tuple[int, float, float]]:
    """
    Sample the learning rate and radius for t = 0..steps-1

    The schedule's own clock is left untouched.

    Returns:
        List of (t, alpha(t), sigma(t)) rows
    """
    probe = sched.copy()
    rows = []
    for t in range(steps):
        probe.t = t
        rows.append((t, learning_rate(probe), neighborhood_radius(probe)))
    return rows


def kernel_denominator(sigma: float, neighborhood: Neighborhood) -> float:
    if sigma <= 0.0:
        raise ValueError(f"Neighborhood radius must be positive, got {sigma}")
    if Neighborhood(neighborhood) is Neighborhood.GAUSSIAN:
        return 2.0 * sigma * sigma
    return 2.0 * sigma


def neighborhood_weight(
    unit: UnitIndex,
    bmu: UnitIndex,
    sigma: float,
    neighborhood: Neighborhood = Neighborhood.LINEAR,
) -> float:
    """
    Kernel value exp(-||p_unit - p_bmu||^2 / (2 sigma)) for one unit

    With neighborhood=GAUSSIAN the denominator becomes 2 sigma^2.
    """
    sq_dist = (unit.row - bmu.row) ** 2 + (unit.col - bmu.col) ** 2
    return math.exp(-sq_dist / kernel_denominator(sigma, neighborhood))


def _check_patch(patch: np.ndarray, dim: int) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 1 or patch.shape[0] != dim:
        raise ValueError(f"Patch has shape {patch.shape}, grid expects ({dim},)")
    if not np.all(np.isfinite(patch)):
        raise ValueError("Patch contains non-finite entries")
    return patch


def bmu_euclidean(patch: np.ndarray, grid: SomGrid) -> UnitIndex:
    """Unit with the smallest squared distance to patch, lowest index on ties"""
    patch = _check_patch(patch, grid.dim)
    winner = batch_bmus(patch[None, :], grid.weights[None, :, :], BmuRule.EUCLIDEAN)
    return grid.unit(int(winner[0]))


def bmu_cosine(patch: np.ndarray, grid: SomGrid) -> UnitIndex:
    """
    Unit with the largest cosine similarity to patch, lowest index on ties

    A zero-norm patch or weight vector has similarity 0 with everything.
    """
    patch = _check_patch(patch, grid.dim)
    winner = batch_bmus(patch[None, :], grid.weights[None, :, :], BmuRule.COSINE)
    return grid.unit(int(winner[0]))


def find_bmu(patch: np.ndarray, grid: SomGrid, rule: BmuRule) -> UnitIndex:
    if BmuRule(rule) is BmuRule.COSINE:
        return bmu_cosine(patch, grid)
    return bmu_euclidean(patch, grid)


def update_weights(
    grid: SomGrid,
    patch: np.ndarray,
    bmu: UnitIndex,
    sched: DecaySchedule,
    neighborhood: Neighborhood = Neighborhood.LINEAR,
) -> SomGrid:
    """
    Move every unit toward patch: w_i += alpha(t) * h(i, bmu, sigma(t)) * (x - w_i)

    The grid is updated in place and returned.

    Raises:
        FloatingPointError: If the update produces non-finite weights
    """
    patch = _check_patch(patch, grid.dim)
    grid.unit(bmu.linear)
    sq_dists = lattice_sq_distances(grid.rows, grid.cols)
    batch_update(
        grid.weights[None, :, :],
        patch[None, :],
        np.array([bmu.linear]),
        sq_dists,
        learning_rate(sched),
        neighborhood_radius(sched),
        neighborhood,
    )
    return grid


# Batched kernels over a stack of S maps with identical shape


def batch_similarity(
    patches: np.ndarray, weights: np.ndarray, rule: BmuRule
) -> np.ndarray:
    """
    Score every unit of every map against its own patch

    Args:
        patches: Array (S, k), patch j belongs to map j
        weights: Array (S, U, k)
        rule: EUCLIDEAN yields squared distances (lower is better),
            COSINE yields cosine similarities (higher is better)

    Returns:
        Array (S, U)
    """
    if BmuRule(rule) is BmuRule.EUCLIDEAN:
        residual = weights - patches[:, None, :]
        return np.einsum("suk,suk->su", residual, residual)

    dots = np.einsum("suk,sk->su", weights, patches)
    norms = np.linalg.norm(weights, axis=-1) * np.linalg.norm(patches, axis=-1)[:, None]
    sims = np.zeros_like(dots)
    np.divide(dots, norms, out=sims, where=norms > 0.0)
    return sims


def batch_bmus(patches: np.ndarray, weights: np.ndarray, rule: BmuRule) -> np.ndarray:
    """Winning linear unit index per map, shape (S,); argmin/argmax keep the first tie"""
    scores = batch_similarity(patches, weights, rule)
    if BmuRule(rule) is BmuRule.EUCLIDEAN:
        return np.argmin(scores, axis=-1)
    return np.argmax(scores, axis=-1)


def batch_update(
    weights: np.ndarray,
    patches: np.ndarray,
    bmus: np.ndarray,
    sq_dists: np.ndarray,
    alpha: float,
    sigma: float,
    neighborhood: Neighborhood = Neighborhood.LINEAR,
    residual: Optional[np.ndarray] = None,
) -> None:
    """
    Apply the neighborhood-weighted update to every map in place

    Args:
        weights: Array (S, U, k), modified in place
        patches: Array (S, k)
        bmus: Winning unit per map, shape (S,)
        sq_dists: Squared lattice distances, shape (U, U)
        alpha: Learning rate at the current step
        sigma: Neighborhood radius at the current step
        neighborhood: Kernel denominator form
        residual: Precomputed (patches - weights) to reuse, optional

    Raises:
        FloatingPointError: If any updated weight is non-finite
    """
    kernel = np.exp(-sq_dists[bmus] / kernel_denominator(sigma, neighborhood))
    if residual is None:
        residual = patches[:, None, :] - weights
    step = (alpha * kernel)[:, :, None] * residual
    if not np.all(np.isfinite(step)):
        raise FloatingPointError(
            f"Weight update produced non-finite values (alpha={alpha}, sigma={sigma})"
        )
    weights += step

"""
DendSOM Model

A single layer of independent SOMs, one per receptive field of the image,
each paired with a hit matrix that counts (label, best-matching unit)
co-occurrences during training.

All maps share one shape, so their weights live in one (S, U, k) array and a
training sample updates every map with a single vectorized step. Map j only
ever reads patch j, weights[j] and hits[j], which makes the stacked update
equal to updating the maps one after another in any order.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from som_core import (
    BmuRule,
    DecaySchedule,
    Neighborhood,
    SomGrid,
    batch_bmus,
    batch_similarity,
    batch_update,
    lattice_sq_distances,
    learning_rate,
    neighborhood_radius,
)

logger = logging.getLogger(__name__)

# Upper bound on elements materialized per chunk when scoring many images
_CHUNK_ELEMENTS = 4_000_000


def tile_count(n: int, p: int, s: int) -> int:
    """
    Number of receptive fields along one image axis

    Returns:
        floor((n - p) / s) + 1

    Raises:
        ValueError: If the patch is larger than the image or any size is not positive
    """
    if n < 1 or p < 1 or s < 1:
        raise ValueError(f"Sizes must be positive, got n={n}, p={p}, s={s}")
    if p > n:
        raise ValueError(f"Patch size {p} exceeds image size {n}")
    return (n - p) // s + 1


@dataclass(frozen=True)
class TilingSpec:
    """Image size, receptive field size and stride along both axes"""

    image_rows: int
    image_cols: int
    patch_rows: int
    patch_cols: int
    stride_rows: int = 1
    stride_cols: int = 1

    def __post_init__(self):
        # validates every field
        _ = self.maps_rows, self.maps_cols

    @property
    def maps_rows(self) -> int:
        return tile_count(self.image_rows, self.patch_rows, self.stride_rows)

    @property
    def maps_cols(self) -> int:
        return tile_count(self.image_cols, self.patch_cols, self.stride_cols)

    @property
    def n_maps(self) -> int:
        return self.maps_rows * self.maps_cols

    @property
    def patch_dim(self) -> int:
        return self.patch_rows * self.patch_cols

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_rows, self.image_cols)

    @classmethod
    def whole_image(cls, image_rows: int, image_cols: int) -> "TilingSpec":
        """One receptive field covering the full image (plain SOM)"""
        return cls(image_rows, image_cols, image_rows, image_cols, 1, 1)


def _windows(images: np.ndarray, tiling: TilingSpec) -> np.ndarray:
    """Strided windows of a stack of images, shape (n, S, P1*P2)"""
    views = sliding_window_view(
        images, (tiling.patch_rows, tiling.patch_cols), axis=(1, 2)
    )
    views = views[:, :: tiling.stride_rows, :: tiling.stride_cols]
    return views.reshape(images.shape[0], tiling.n_maps, tiling.patch_dim)


def _check_images(images: np.ndarray, tiling: TilingSpec) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != tiling.image_shape:
        raise ValueError(
            f"Images have shape {images.shape[1:] if images.ndim == 3 else images.shape}, "
            f"tiling expects {tiling.image_shape}"
        )
    return images


def extract_receptive_fields(image: np.ndarray, tiling: TilingSpec) -> np.ndarray:
    """
    Cut an image into its receptive fields

    Patch (a, b) is the window whose top-left pixel is (a*s1, b*s2), flattened
    row-major. Patches are ordered row-major over (a, b).

    Args:
        image: Array of shape (N1, N2)
        tiling: Tiling specification

    Returns:
        Array of shape (S1*S2, P1*P2)
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != tiling.image_shape:
        raise ValueError(
            f"Image has shape {image.shape}, tiling expects {tiling.image_shape}"
        )
    return _windows(image[None, :, :], tiling)[0].copy()


@dataclass(frozen=True)
class HitMatrix:
    """Read-only view of one map's (label, unit) BMU counts"""

    counts: np.ndarray

    @property
    def n_labels(self) -> int:
        return self.counts.shape[0]

    @property
    def n_units(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


class DendSomModel:
    """
    DendSOM: S1 x S2 maps over receptive fields plus one hit matrix per map

    Args:
        tiling: Receptive field layout
        units_rows: Lattice height of every map (U1)
        units_cols: Lattice width of every map (U2)
        n_labels: Size of the label space the hit matrices count over
        schedule: Shared decay schedule and clock
        weights: Initial weights, shape (S, U, k)
        bmu_rule: Best-matching-unit rule used in training and inference
        neighborhood: Kernel denominator form
        hits: Initial hit counts, shape (S, n_labels, U); zeros when omitted
    """

    def __init__(
        self,
        tiling: TilingSpec,
        units_rows: int,
        units_cols: int,
        n_labels: int,
        schedule: DecaySchedule,
        weights: np.ndarray,
        bmu_rule: BmuRule = BmuRule.COSINE,
        neighborhood: Neighborhood = Neighborhood.LINEAR,
        hits: Optional[np.ndarray] = None,
    ):
        if units_rows < 1 or units_cols < 1:
            raise ValueError(
                f"Map lattice must be positive, got {units_rows}x{units_cols}"
            )
        if n_labels < 1:
            raise ValueError(f"n_labels must be positive, got {n_labels}")

        self.tiling = tiling
        self.units_rows = units_rows
        self.units_cols = units_cols
        self.n_labels = n_labels
        self.schedule = schedule
        self.bmu_rule = BmuRule(bmu_rule)
        self.neighborhood = Neighborhood(neighborhood)

        shape = (tiling.n_maps, self.n_units, tiling.patch_dim)
        self.weights = np.array(weights, dtype=np.float64)
        if self.weights.shape != shape:
            raise ValueError(f"Weights have shape {self.weights.shape}, expected {shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Weights contain non-finite entries")

        hits_shape = (tiling.n_maps, n_labels, self.n_units)
        if hits is None:
            self.hits = np.zeros(hits_shape, dtype=np.int64)
        else:
            self.hits = np.array(hits, dtype=np.int64)
            if self.hits.shape != hits_shape:
                raise ValueError(
                    f"Hit counts have shape {self.hits.shape}, expected {hits_shape}"
                )
            if np.any(self.hits < 0):
                raise ValueError("Hit counts must be non-negative")

        self._sq_dists = lattice_sq_distances(units_rows, units_cols)

    @classmethod
    def create(
        cls,
        tiling: TilingSpec,
        units_rows: int,
        units_cols: int,
        n_labels: int,
        schedule: DecaySchedule,
        seed,
        bmu_rule: BmuRule = BmuRule.COSINE,
        neighborhood: Neighborhood = Neighborhood.LINEAR,
    ) -> "DendSomModel":
        """
        Build an untrained model with seeded U[0, 0.1) weights

        Args:
            seed: Integer seed or numpy SeedSequence for weight initialization
        """
        rng = np.random.default_rng(seed)
        grids = [
            SomGrid.random(units_rows, units_cols, tiling.patch_dim, rng)
            for _ in range(tiling.n_maps)
        ]
        weights = np.stack([grid.weights for grid in grids])
        logger.debug(
            f"Created DendSOM with {tiling.n_maps} maps of {units_rows}x{units_cols} "
            f"units, patch length {tiling.patch_dim}"
        )
        return cls(
            tiling,
            units_rows,
            units_cols,
            n_labels,
            schedule,
            weights,
            bmu_rule=bmu_rule,
            neighborhood=neighborhood,
        )

    @property
    def n_units(self) -> int:
        return self.units_rows * self.units_cols

    @property
    def n_maps(self) -> int:
        return self.tiling.n_maps

    @property
    def grids(self) -> list[SomGrid]:
        """Per-map SomGrid copies, row-major over the receptive fields"""
        return [
            SomGrid(self.units_rows, self.units_cols, self.tiling.patch_dim, w.copy())
            for w in self.weights
        ]

    def hit_matrix(self, j: int) -> HitMatrix:
        view = self.hits[j].view()
        view.flags.writeable = False
        return HitMatrix(view)

    @property
    def samples_seen(self) -> int:
        """Number of training samples counted (identical for every map)"""
        return int(self.hits[0].sum())

    @property
    def is_trained(self) -> bool:
        return self.samples_seen > 0

    def bmus(self, image: np.ndarray) -> np.ndarray:
        """Winning unit of every map for one image, shape (S,)"""
        patches = extract_receptive_fields(image, self.tiling)
        return batch_bmus(patches, self.weights, self.bmu_rule)

    def bmus_many(self, images: np.ndarray) -> np.ndarray:
        """Winning units for a stack of images, shape (n, S)"""
        images = _check_images(images, self.tiling)
        per_image = self.weights.size
        chunk = max(1, _CHUNK_ELEMENTS // per_image)
        out = np.empty((images.shape[0], self.n_maps), dtype=np.int64)
        for start in range(0, images.shape[0], chunk):
            windows = _windows(images[start : start + chunk], self.tiling)
            for offset, patches in enumerate(windows):
                out[start + offset] = batch_bmus(patches, self.weights, self.bmu_rule)
        return out

    def train_step(self, image: np.ndarray, label: int) -> "DendSomModel":
        """
        Present one labeled sample to every map

        BMUs are found before the update and those same BMUs are counted.
        The shared clock advances by one afterwards.
        """
        if not 0 <= int(label) < self.n_labels:
            raise ValueError(f"Label {label} outside [0, {self.n_labels})")
        patches = extract_receptive_fields(image, self.tiling)
        if not np.all(np.isfinite(patches)):
            raise ValueError("Image contains non-finite pixels")

        if self.bmu_rule is BmuRule.EUCLIDEAN:
            residual = patches[:, None, :] - self.weights
            winners = np.argmin(
                np.einsum("suk,suk->su", residual, residual), axis=-1
            )
        else:
            residual = None
            winners = np.argmax(
                batch_similarity(patches, self.weights, self.bmu_rule), axis=-1
            )

        batch_update(
            self.weights,
            patches,
            winners,
            self._sq_dists,
            learning_rate(self.schedule),
            neighborhood_radius(self.schedule),
            self.neighborhood,
            residual=residual,
        )
        self.hits[np.arange(self.n_maps), int(label), winners] += 1
        self.schedule.t += 1
        return self

    def maybe_rewind_schedule(self, step_index: int) -> "DendSomModel":
        """Rewind the clock to t // r_exp whenever step_index is a multiple of iter_crit"""
        if step_index < 1:
            raise ValueError(f"Step index must be at least 1, got {step_index}")
        if step_index % self.schedule.iter_crit == 0:
            rewound = self.schedule.t // self.schedule.r_exp
            if rewound != self.schedule.t:
                logger.debug(
                    f"Rewinding clock at step {step_index}: t {self.schedule.t} -> {rewound}"
                )
            self.schedule.t = rewound
        return self

    def fit(
        self,
        images: np.ndarray,
        labels: Iterable[int],
        n_iter: Optional[int] = None,
        start_step: int = 0,
        log_every: int = 10_000,
    ) -> "DendSomModel":
        """
        Single pass over the stream in the given order

        Args:
            images: Array (n, N1, N2)
            labels: n integer labels
            n_iter: Number of leading samples to use; all of them when None
            start_step: Samples of the same stream presented by earlier calls;
                the rewind check counts on from here
            log_every: Progress log period in samples

        Raises:
            ValueError: On an empty stream or n_iter beyond its length
        """
        labels = np.asarray(labels)
        if len(images) == 0:
            raise ValueError("Cannot fit on an empty stream")
        if len(images) != len(labels):
            raise ValueError(
                f"Stream has {len(images)} images but {len(labels)} labels"
            )
        if n_iter is None:
            n_iter = len(images)
        if not 0 <= n_iter <= len(images):
            raise ValueError(
                f"n_iter={n_iter} outside [0, {len(images)}]; fit makes a single pass"
            )

        if start_step < 0:
            raise ValueError(f"start_step must be non-negative, got {start_step}")

        for i in range(1, n_iter + 1):
            self.train_step(images[i - 1], int(labels[i - 1]))
            self.maybe_rewind_schedule(start_step + i)
            if log_every and i % log_every == 0:
                logger.info(
                    f"Trained {i}/{n_iter} samples "
                    f"(t={self.schedule.t}, alpha={learning_rate(self.schedule):.5f})"
                )
        return self

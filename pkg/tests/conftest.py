"""
Shared test fixtures for the DendSOM tests
"""

import struct

import numpy as np
import pytest

from datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, LabeledDataset
from dendsom import DendSomModel, TilingSpec
from som_core import DecaySchedule

# 2x2 quadrant patterns used by the synthetic quadrant dataset
BRIGHT = np.array([1.0, 1.0, 1.0, 1.0])
CHECKER = np.array([1.0, 0.0, 0.0, 1.0])


def idx_images_bytes(pixels: np.ndarray) -> bytes:
    """IDX3 image file content for a (n, rows, cols) uint8 array"""
    n, rows, cols = pixels.shape
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.astype(
        np.uint8
    ).tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + np.asarray(
        labels, dtype=np.uint8
    ).tobytes()


def cifar_batch_bytes(labels, red, green, blue) -> bytes:
    """CIFAR-10 binary records: label byte then R, G, B planes of 32x32"""
    out = bytearray()
    for label, r, g, b in zip(labels, red, green, blue):
        out.append(label)
        for plane in (r, g, b):
            out.extend(np.asarray(plane, dtype=np.uint8).tobytes())
    return bytes(out)


def quadrant_image(label: int) -> np.ndarray:
    """4x4 image whose quadrant `label` is bright and the others checkered"""
    image = np.zeros((4, 4))
    for q in range(4):
        top, left = 2 * (q // 2), 2 * (q % 2)
        pattern = BRIGHT if q == label else CHECKER
        image[top : top + 2, left : left + 2] = pattern.reshape(2, 2)
    return image


def quadrant_dataset(labels, split: str = "train") -> LabeledDataset:
    labels = np.asarray(labels, dtype=np.int64)
    images = np.stack([quadrant_image(int(label)) for label in labels])
    return LabeledDataset(images, labels, name="quadrants", split=split)


@pytest.fixture
def schedule():
    """Schedule with the published learning-rate settings on a small radius"""
    return DecaySchedule(alpha0=0.95, sigma0=1.5, lambda_=1000.0, alpha_crit=0.005)


@pytest.fixture
def frozen_schedule():
    """Learning rate small enough that weights stay put during a short test"""
    return DecaySchedule(alpha0=1e-9, sigma0=1.0, lambda_=1000.0, alpha_crit=1e-12)


def make_quadrant_model(n_labels: int = 4) -> DendSomModel:
    """
    Untrained model over 4x4 images whose maps already separate the two patterns

    In every map unit 0 is the checker pattern and unit 1 the bright one, so
    a quadrant image has fixed BMUs and accuracy depends only on the counts.
    The learning rate is negligible, so training only changes the counts.
    """
    weights = np.zeros((4, 4, 4))
    weights[:, 2:, :] = np.array([0.0, 1.0, 0.0, 0.0])
    weights[:, 0, :] = CHECKER
    weights[:, 1, :] = BRIGHT
    schedule = DecaySchedule(alpha0=1e-9, sigma0=1.0, lambda_=1000.0, alpha_crit=1e-12)
    return DendSomModel(
        TilingSpec(4, 4, 2, 2, 2, 2), 2, 2, n_labels, schedule, weights, bmu_rule="cosine"
    )


@pytest.fixture
def quadrant_model():
    return make_quadrant_model()


@pytest.fixture
def balanced_labels():
    """40 labels, ten of each quadrant label, interleaved"""
    return np.tile(np.arange(4), 10)


@pytest.fixture
def random_model(schedule):
    """Small random DendSOM over 6x6 images"""
    tiling = TilingSpec(6, 6, 3, 3, 1, 1)
    return DendSomModel.create(tiling, 3, 3, 4, schedule, seed=7)

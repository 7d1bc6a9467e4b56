"""
Dataset Loading

Bit-exact readers for the IDX container (MNIST, Fashion-MNIST) and the
CIFAR-10 binary batch format, plus the in-memory labeled dataset the
training and evaluation code consume.

Pixels are scaled to [0, 1] by dividing raw bytes by 255. CIFAR-10 records
are collapsed to one gray channel (BT.601 luma by default).
"""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_SIDE = 32
CIFAR_RECORD_BYTES = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
GRAYSCALE_MODES = ("luma", "mean")

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_BATCH_DIR = "cifar-10-batches-bin"
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}
DATASET_NAMES = ("mnist", "fashion", "cifar10")

PathLike = Union[str, Path]


class DatasetFormatError(ValueError):
    """Base class for malformed dataset files"""


class MagicNumberError(DatasetFormatError):
    """IDX header does not carry the expected magic number"""


class TruncatedFileError(DatasetFormatError):
    """File ends before the declared payload"""


class CountMismatchError(DatasetFormatError):
    """Image and label files disagree on the number of samples"""


class RecordSizeError(DatasetFormatError):
    """CIFAR batch length is not a whole number of records"""


@dataclass(frozen=True)
class LabeledDataset:
    """
    Images in [0, 1] with integer labels

    Args:
        images: Array (n, N1, N2) of float64, read-only
        labels: Array (n,) of int64, read-only
        name: Dataset identifier
        split: "train" or "test"
    """

    images: np.ndarray
    labels: np.ndarray
    name: str
    split: str

    def __post_init__(self):
        # read-only views; the caller keeps write access to its own arrays
        for name in ("images", "labels"):
            view = np.asarray(getattr(self, name)).view()
            view.flags.writeable = False
            object.__setattr__(self, name, view)
        if self.images.ndim != 3:
            raise ValueError(f"Images must be (n, rows, cols), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        """Samples at the given positions, in the given order"""
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            name=self.name,
            split=self.split,
        )


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_all(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    with _open_maybe_gzip(path) as f:
        return f.read()


def _read_idx_header(payload: bytes, path: PathLike, magic: int, n_dims: int) -> tuple:
    header_bytes = 4 * (1 + n_dims)
    if len(payload) < header_bytes:
        raise TruncatedFileError(
            f"{path}: {len(payload)} bytes is shorter than the {header_bytes}-byte header"
        )
    found, *dims = struct.unpack(f">{1 + n_dims}I", payload[:header_bytes])
    if found != magic:
        raise MagicNumberError(
            f"{path}: magic number 0x{found:08x}, expected 0x{magic:08x}"
        )
    return tuple(dims), header_bytes


def load_idx(
    images_path: PathLike,
    labels_path: PathLike,
    name: str = "idx",
    split: str = "train",
) -> LabeledDataset:
    """
    Read an IDX image file and its label file

    Both files may be raw or gzip-compressed.

    Raises:
        MagicNumberError: Header magic is not 0x00000803 / 0x00000801
        TruncatedFileError: Payload shorter than the header declares
        CountMismatchError: Files declare different sample counts
    """
    image_bytes = _read_all(images_path)
    (count, rows, cols), offset = _read_idx_header(
        image_bytes, images_path, IDX_IMAGES_MAGIC, 3
    )
    expected = count * rows * cols
    if len(image_bytes) - offset < expected:
        raise TruncatedFileError(
            f"{images_path}: expected {expected} pixel bytes, "
            f"found {len(image_bytes) - offset}"
        )
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=expected, offset=offset)

    label_bytes = _read_all(labels_path)
    (label_count,), label_offset = _read_idx_header(
        label_bytes, labels_path, IDX_LABELS_MAGIC, 1
    )
    if label_count != count:
        raise CountMismatchError(
            f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )
    if len(label_bytes) - label_offset < label_count:
        raise TruncatedFileError(
            f"{labels_path}: expected {label_count} label bytes, "
            f"found {len(label_bytes) - label_offset}"
        )
    labels = np.frombuffer(
        label_bytes, dtype=np.uint8, count=label_count, offset=label_offset
    )

    images = pixels.reshape(count, rows, cols).astype(np.float64) / 255.0
    logger.info(f"Loaded {count} {rows}x{cols} images from {Path(images_path).name}")
    return LabeledDataset(images, labels.astype(np.int64), name=name, split=split)


def to_grayscale(planes: np.ndarray, mode: str = "luma") -> np.ndarray:
    """
    Collapse (..., 3, H, W) color planes to (..., H, W)

    Args:
        planes: Red, green and blue planes in that order
        mode: "luma" for 0.299 R + 0.587 G + 0.114 B, "mean" for the channel average
    """
    planes = np.asarray(planes, dtype=np.float64)
    if mode == "luma":
        r, g, b = LUMA_WEIGHTS
        return r * planes[..., 0, :, :] + g * planes[..., 1, :, :] + b * planes[..., 2, :, :]
    if mode == "mean":
        return planes.mean(axis=-3)
    raise ValueError(f"Unknown grayscale mode '{mode}', expected one of {GRAYSCALE_MODES}")


def load_cifar10(
    batch_paths: Iterable[PathLike],
    name: str = "cifar10",
    split: str = "train",
    grayscale: str = "luma",
) -> LabeledDataset:
    """
    Read CIFAR-10 binary batches into 32x32 grayscale images

    Each 3073-byte record is one label byte followed by the red, green and
    blue 32x32 planes, each row-major.

    Raises:
        RecordSizeError: A batch is empty or not a whole number of records
    """
    images, labels = [], []
    for path in batch_paths:
        payload = _read_all(path)
        if len(payload) == 0 or len(payload) % CIFAR_RECORD_BYTES:
            raise RecordSizeError(
                f"{path}: {len(payload)} bytes is not a positive multiple of "
                f"{CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(payload, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
        images.append(to_grayscale(planes, grayscale) / 255.0)
        labels.append(records[:, 0].astype(np.int64))
        logger.info(f"Loaded {len(records)} records from {Path(path).name}")

    if not images:
        raise ValueError("No CIFAR-10 batch files given")
    return LabeledDataset(
        np.concatenate(images), np.concatenate(labels), name=name, split=split
    )


def shuffle(dataset: LabeledDataset, seed) -> LabeledDataset:
    """
    Deterministic permutation of the samples

    Args:
        dataset: Dataset to permute
        seed: Integer seed or numpy SeedSequence
    """
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(order)


def _resolve_idx_file(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    return directory / f"{stem}.gz"


def dataset_files(name: str, split: str, data_dir: PathLike) -> list[Path]:
    """
    Files a dataset split is read from

    Layout: <data_dir>/mnist/, <data_dir>/fashion/ hold the IDX files (raw or
    .gz); <data_dir>/cifar10/cifar-10-batches-bin/ holds the binary batches.
    """
    if name not in DATASET_NAMES:
        raise ValueError(f"Unknown dataset '{name}', expected one of {DATASET_NAMES}")
    if split not in IDX_FILES:
        raise ValueError(f"Unknown split '{split}', expected 'train' or 'test'")

    root = Path(data_dir)
    if name == "cifar10":
        return [root / "cifar10" / CIFAR_BATCH_DIR / f for f in CIFAR_FILES[split]]
    return [_resolve_idx_file(root / name, stem) for stem in IDX_FILES[split]]


def missing_files(name: str, data_dir: PathLike) -> list[Path]:
    """Files of either split that are absent"""
    files = dataset_files(name, "train", data_dir) + dataset_files(name, "test", data_dir)
    return [path for path in files if not path.exists()]


def load_dataset(
    name: str,
    split: str,
    data_dir: PathLike,
    grayscale: Optional[str] = "luma",
) -> LabeledDataset:
    """Load one canonical split of mnist, fashion or cifar10 from data_dir"""
    files = dataset_files(name, split, data_dir)
    if name == "cifar10":
        return load_cifar10(files, name=name, split=split, grayscale=grayscale or "luma")
    images_path, labels_path = files
    return load_idx(images_path, labels_path, name=name, split=split)

"""
Dataset Fetcher

Downloads the canonical MNIST, Fashion-MNIST and CIFAR-10 archives into the
layout `datasets.load_dataset` reads, verifying each file against a SHA-256
manifest of plain "sha256  path" lines, paths relative to the data directory.

The digests of the canonical archives ship with the package in
checksums.sha256. Every verified digest is also recorded in the data
directory's own checksums.sha256; a file pinned in neither place is accepted
on first download and checked against that record afterwards. A file that
fails verification is deleted.
"""

import hashlib
import logging
import tarfile
from pathlib import Path
from typing import Optional, Union

import requests

from datasets import CIFAR_BATCH_DIR, DATASET_NAMES, IDX_FILES

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = "checksums.sha256"
PINNED_MANIFEST = Path(__file__).resolve().parent / MANIFEST_NAME

SOURCES = {
    "mnist": "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "fashion": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    "cifar10": "https://www.cs.toronto.edu/~kriz/",
}
CIFAR_ARCHIVE = "cifar-10-binary.tar.gz"


class ChecksumMismatchError(ValueError):
    """Downloaded file does not match its pinned SHA-256 digest"""


def sha256_of(path: PathLike, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_manifest(path: PathLike) -> dict[str, str]:
    """
    Parse "sha256  path" lines

    Returns:
        Mapping of path to lowercase hex digest
    """
    path = Path(path)
    if not path.exists():
        return {}
    pins = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2 or len(parts[0]) != 64:
            raise ValueError(f"{path}:{line_no}: expected 'sha256  path', got '{line}'")
        pins[parts[1].strip()] = parts[0].lower()
    return pins


def write_manifest(path: PathLike, pins: dict[str, str]):
    lines = [f"{digest}  {name}" for name, digest in sorted(pins.items())]
    Path(path).write_text("\n".join(lines) + "\n")


class DatasetFetcher:
    """
    Downloads dataset archives with checksum verification

    Args:
        data_dir: Root directory datasets are stored under
        manifest_path: Pinned checksums; defaults to the manifest shipped with the package
        record_path: Where verified digests are recorded; defaults to
            <data_dir>/checksums.sha256
        timeout: Per-request timeout in seconds
    """

    def __init__(
        self,
        data_dir: PathLike,
        manifest_path: Optional[PathLike] = None,
        record_path: Optional[PathLike] = None,
        timeout: float = 60.0,
    ):
        self.data_dir = Path(data_dir)
        self.manifest_path = Path(manifest_path) if manifest_path else PINNED_MANIFEST
        self.record_path = (
            Path(record_path) if record_path else self.data_dir / MANIFEST_NAME
        )
        self.timeout = timeout
        self.session = requests.Session()

    def _request(self, url: str) -> requests.Response:
        """
        Open a streaming GET request

        Raises:
            requests.HTTPError: On a non-2xx response
        """
        try:
            response = self.session.get(url, stream=True, timeout=self.timeout)
            response.raise_for_status()
            return response
        except requests.exceptions.HTTPError as e:
            logger.error(f"Download failed: {e}")
            raise

    def download(self, url: str, destination: PathLike) -> Path:
        """Stream url into destination, replacing any partial file"""
        destination = Path(destination)
        destination.parent.mkdir(parents=True, exist_ok=True)
        partial = destination.with_name(destination.name + ".part")

        logger.info(f"Downloading {url}")
        response = self._request(url)
        with open(partial, "wb") as f:
            for chunk in response.iter_content(chunk_size=1 << 20):
                f.write(chunk)
        partial.replace(destination)
        return destination

    def manifest_key(self, path: PathLike) -> str:
        """Manifest entry for path: relative to the data directory, else its name"""
        path = Path(path)
        try:
            return path.relative_to(self.data_dir).as_posix()
        except ValueError:
            return path.name

    def verify(self, path: PathLike, pins: dict[str, str]) -> str:
        """
        Check path against its pinned digest, pinning it when absent

        Raises:
            ChecksumMismatchError: If a pinned digest differs; the file is deleted
        """
        path = Path(path)
        key = self.manifest_key(path)
        digest = sha256_of(path)
        pinned = pins.get(key)
        if pinned is None:
            logger.warning(f"⚠️  No pinned checksum for {key}; recording {digest}")
            pins[key] = digest
        elif pinned != digest:
            path.unlink()
            logger.error(f"❌ Checksum mismatch for {key}; deleted {path}")
            raise ChecksumMismatchError(
                f"{key}: sha256 {digest} does not match pinned {pinned}; "
                "the file was deleted, fetch again to retry"
            )
        else:
            logger.info(f"Checksum verified for {key}")
        return digest

    def _archives(self, name: str) -> list[tuple[str, Path]]:
        if name == "cifar10":
            return [
                (SOURCES[name] + CIFAR_ARCHIVE, self.data_dir / name / CIFAR_ARCHIVE)
            ]
        stems = [stem for pair in IDX_FILES.values() for stem in pair]
        return [
            (SOURCES[name] + f"{stem}.gz", self.data_dir / name / f"{stem}.gz")
            for stem in stems
        ]

    def fetch(self, name: str, force: bool = False) -> list[Path]:
        """
        Download and verify one dataset

        Args:
            name: "mnist", "fashion" or "cifar10"
            force: Download again even if the file exists

        Returns:
            Paths of the verified archives
        """
        if name not in DATASET_NAMES:
            raise ValueError(f"Unknown dataset '{name}', expected one of {DATASET_NAMES}")

        # shipped or explicit pins take precedence over recorded digests
        pins = {**read_manifest(self.record_path), **read_manifest(self.manifest_path)}
        fetched = []
        for url, destination in self._archives(name):
            if force or not destination.exists():
                self.download(url, destination)
            else:
                logger.info(f"Using existing {destination}")
            self.verify(destination, pins)
            fetched.append(destination)

        self.record_path.parent.mkdir(parents=True, exist_ok=True)
        write_manifest(self.record_path, pins)

        if name == "cifar10":
            self._unpack_cifar(fetched[0])
        return fetched

    def _unpack_cifar(self, archive: Path):
        target = archive.parent
        if (target / CIFAR_BATCH_DIR).is_dir():
            return
        logger.info(f"Unpacking {archive.name}")
        with tarfile.open(archive, "r:gz") as tar:
            tar.extractall(target, filter="data")

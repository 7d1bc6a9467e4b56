"""
Tests for dataset download and checksum verification
"""

import hashlib
import io
import tarfile
from unittest.mock import MagicMock, patch

import pytest
import requests

from data_fetch import (
    PINNED_MANIFEST,
    ChecksumMismatchError,
    DatasetFetcher,
    read_manifest,
    sha256_of,
    write_manifest,
)


def fake_response(payload: bytes):
    response = MagicMock()
    response.iter_content.return_value = [payload[:5], payload[5:]]
    return response


@pytest.fixture
def fetcher(tmp_path):
    """Fetcher into tmp_path with no pinned digests"""
    return DatasetFetcher(tmp_path, manifest_path=tmp_path / "no-pins.sha256")


def echo_urls(fetcher):
    """Patch downloads to return each URL as the file content"""
    return patch.object(
        fetcher, "_request", side_effect=lambda url: fake_response(url.encode())
    )


def cifar_archive() -> bytes:
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w:gz") as tar:
        data = b"\x03" + b"\x00" * 3072
        info = tarfile.TarInfo("cifar-10-batches-bin/test_batch.bin")
        info.size = len(data)
        tar.addfile(info, io.BytesIO(data))
    return buffer.getvalue()


class TestManifest:
    """Test the checksum manifest"""

    def test_round_trip(self, tmp_path):
        """Test written pins read back unchanged"""
        path = tmp_path / "checksums.sha256"
        pins = {"a.gz": "0" * 64, "b.gz": "f" * 64}
        write_manifest(path, pins)
        assert read_manifest(path) == pins

    def test_missing_manifest_is_empty(self, tmp_path):
        """Test an absent manifest pins nothing"""
        assert read_manifest(tmp_path / "none") == {}

    def test_malformed_line(self, tmp_path):
        """Test lines that are not 'digest  name' are rejected"""
        path = tmp_path / "checksums.sha256"
        path.write_text("abc  file.gz\n")
        with pytest.raises(ValueError, match="expected"):
            read_manifest(path)

    def test_comments_ignored(self, tmp_path):
        """Test comment and blank lines are skipped"""
        path = tmp_path / "checksums.sha256"
        path.write_text("# pins\n\n" + "1" * 64 + "  x.gz\n")
        assert read_manifest(path) == {"x.gz": "1" * 64}


class TestPinnedManifest:
    """Test the digests shipped with the package"""

    def test_default_manifest_is_shipped(self, tmp_path):
        """Test fetchers verify against the shipped list unless told otherwise"""
        fetcher = DatasetFetcher(tmp_path)
        assert fetcher.manifest_path == PINNED_MANIFEST
        assert fetcher.record_path == tmp_path / "checksums.sha256"

    def test_every_archive_is_pinned(self, tmp_path):
        """Test each canonical archive has a digest, keyed by dataset folder"""
        pins = read_manifest(PINNED_MANIFEST)
        fetcher = DatasetFetcher(tmp_path)
        expected = {
            fetcher.manifest_key(destination)
            for name in ("mnist", "fashion", "cifar10")
            for _, destination in fetcher._archives(name)
        }
        assert set(pins) == expected
        assert len(pins) == 9
        key = "{}/train-images-idx3-ubyte.gz"
        assert pins[key.format("mnist")] != pins[key.format("fashion")]

    def test_wrong_download_is_rejected_and_deleted(self, tmp_path):
        """Test content that differs from the shipped digest never stays on disk"""
        fetcher = DatasetFetcher(tmp_path)
        with echo_urls(fetcher):
            with pytest.raises(ChecksumMismatchError, match="mnist/"):
                fetcher.fetch("mnist")
        assert not list((tmp_path / "mnist").glob("*.gz"))
        assert not (tmp_path / "checksums.sha256").exists()

    def test_pins_override_recorded_digests(self, tmp_path):
        """Test a stale record cannot vouch for a file the pins reject"""
        path = tmp_path / "mnist" / "t10k-labels-idx1-ubyte.gz"
        path.parent.mkdir()
        path.write_bytes(b"abc")
        key = "mnist/t10k-labels-idx1-ubyte.gz"
        write_manifest(tmp_path / "checksums.sha256", {key: sha256_of(path)})
        write_manifest(tmp_path / "pins.sha256", {key: "0" * 64})
        fetcher = DatasetFetcher(tmp_path, manifest_path=tmp_path / "pins.sha256")
        with patch.object(fetcher, "_request") as mock_request:
            with pytest.raises(ChecksumMismatchError):
                fetcher.fetch("mnist")
        assert not path.exists()
        mock_request.assert_called()


class TestDatasetFetcher:
    """Test the downloader with a mocked HTTP session"""

    def test_download_streams_to_destination(self, tmp_path, fetcher):
        """Test content lands in the target and no partial file remains"""
        with patch.object(fetcher, "_request", return_value=fake_response(b"hello world")):
            path = fetcher.download("https://example.org/f.gz", tmp_path / "sub" / "f.gz")
        assert path.read_bytes() == b"hello world"
        assert not (tmp_path / "sub" / "f.gz.part").exists()

    def test_verify_pins_unknown_file(self, tmp_path, fetcher):
        """Test a file without a pin is recorded under its relative path"""
        path = tmp_path / "mnist" / "f.gz"
        path.parent.mkdir()
        path.write_bytes(b"abc")
        pins = {}
        digest = fetcher.verify(path, pins)
        assert digest == hashlib.sha256(b"abc").hexdigest()
        assert pins == {"mnist/f.gz": digest}

    def test_verify_rejects_mismatch(self, tmp_path, fetcher):
        """Test a pinned digest must match and the bad file is removed"""
        path = tmp_path / "f.gz"
        path.write_bytes(b"abc")
        with pytest.raises(ChecksumMismatchError, match="does not match"):
            fetcher.verify(path, {"f.gz": "0" * 64})
        assert not path.exists()

    def test_fetch_mnist(self, tmp_path, fetcher):
        """Test all four IDX archives are fetched and recorded"""
        with echo_urls(fetcher) as mock_request:
            paths = fetcher.fetch("mnist")

        assert mock_request.call_count == 4
        assert {p.name for p in paths} == {
            "train-images-idx3-ubyte.gz",
            "train-labels-idx1-ubyte.gz",
            "t10k-images-idx3-ubyte.gz",
            "t10k-labels-idx1-ubyte.gz",
        }
        assert all(p.parent == tmp_path / "mnist" for p in paths)
        pins = read_manifest(tmp_path / "checksums.sha256")
        assert pins["mnist/t10k-images-idx3-ubyte.gz"] == sha256_of(
            tmp_path / "mnist" / "t10k-images-idx3-ubyte.gz"
        )

    def test_same_filenames_do_not_collide(self, tmp_path, fetcher):
        """Test MNIST and Fashion-MNIST keep separate records"""
        with echo_urls(fetcher):
            fetcher.fetch("mnist")
            fetcher.fetch("fashion")
        pins = read_manifest(tmp_path / "checksums.sha256")
        assert len(pins) == 8
        key = "{}/train-labels-idx1-ubyte.gz"
        assert pins[key.format("mnist")] != pins[key.format("fashion")]

    def test_existing_files_are_not_downloaded(self, fetcher):
        """Test a second fetch only verifies"""
        with echo_urls(fetcher):
            fetcher.fetch("fashion")
        with patch.object(fetcher, "_request") as mock_request:
            fetcher.fetch("fashion")
        mock_request.assert_not_called()

    def test_corrupted_file_detected(self, tmp_path, fetcher):
        """Test a file changed after recording fails and is fetched again next time"""
        with echo_urls(fetcher):
            fetcher.fetch("mnist")
        tampered = tmp_path / "mnist" / "train-labels-idx1-ubyte.gz"
        tampered.write_bytes(b"tampered")
        with pytest.raises(ChecksumMismatchError):
            fetcher.fetch("mnist")
        assert not tampered.exists()

        with echo_urls(fetcher) as mock_request:
            fetcher.fetch("mnist")
        assert mock_request.call_count == 1
        assert tampered.exists()

    def test_fetch_cifar_unpacks(self, tmp_path, fetcher):
        """Test the CIFAR archive is unpacked next to it"""
        archive = cifar_archive()
        with patch.object(fetcher, "_request", return_value=fake_response(archive)):
            fetcher.fetch("cifar10")
        assert (tmp_path / "cifar10" / "cifar-10-batches-bin" / "test_batch.bin").exists()

    def test_http_error_propagates(self, fetcher):
        """Test a failed request raises HTTPError"""
        response = MagicMock()
        response.raise_for_status.side_effect = requests.exceptions.HTTPError("404")
        with patch.object(fetcher.session, "get", return_value=response):
            with pytest.raises(requests.exceptions.HTTPError):
                fetcher.fetch("mnist")

    def test_unknown_dataset(self, fetcher):
        """Test dataset names are validated"""
        with pytest.raises(ValueError, match="Unknown dataset"):
            fetcher.fetch("imagenet")

    def test_custom_manifest_location(self, tmp_path):
        """Test pins come from an explicit manifest and records go to an explicit path"""
        manifest = tmp_path / "pins" / "my.sha256"
        record = tmp_path / "records" / "seen.sha256"
        fetcher = DatasetFetcher(tmp_path / "data", manifest_path=manifest, record_path=record)
        with echo_urls(fetcher):
            fetcher.fetch("mnist")
        assert not manifest.exists()
        assert len(read_manifest(record)) == 4

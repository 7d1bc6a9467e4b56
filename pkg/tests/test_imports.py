"""
Basic tests to ensure modules can be imported and have expected structure.

These tests need no dataset files and can run in CI.
"""

import pytest


def test_import_som_core():
    """Test that the SOM primitives can be imported"""
    from som_core import DecaySchedule, SomGrid, find_bmu, update_weights

    assert all(obj is not None for obj in (DecaySchedule, SomGrid, find_bmu, update_weights))


def test_import_dendsom():
    """Test that DendSomModel can be imported"""
    from dendsom import DendSomModel, TilingSpec

    assert DendSomModel is not None
    assert TilingSpec is not None


def test_model_has_methods():
    """Test that DendSomModel has expected methods"""
    from dendsom import DendSomModel

    expected_methods = [
        "create",
        "bmus",
        "bmus_many",
        "train_step",
        "fit",
        "hit_matrix",
        "maybe_rewind_schedule",
    ]

    for method in expected_methods:
        assert hasattr(DendSomModel, method), f"DendSomModel missing {method} method"


def test_classifier_has_methods():
    """Test that PmiClassifier exposes prediction"""
    from pmi_inference import PmiClassifier

    for method in ("predict", "predict_bmus", "scores_for_bmus"):
        assert hasattr(PmiClassifier, method), f"PmiClassifier missing {method} method"


def test_snapshot_constants():
    """Test that snapshots carry the DENDSOM1 tag"""
    from model_io import MAGIC

    assert MAGIC == "DENDSOM1"


def test_dataset_constants():
    """Test supported dataset names"""
    from datasets import DATASET_NAMES

    assert set(DATASET_NAMES) == {"mnist", "fashion", "cifar10"}


def test_cli_verbs():
    """Test the command line exposes every verb"""
    from experiment_cli import build_parser

    parser = build_parser()
    verbs = parser._subparsers._group_actions[0].choices
    assert set(verbs) == {"scenario", "sweep", "train", "eval", "schedule", "fetch-data"}


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

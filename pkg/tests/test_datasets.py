"""Tests for synthetic datasets and splits."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from churn_compass.errors import InvalidInputError, UsageError
from churn_compass.models import LabelVector
from churn_compass.storage import save_labels, save_matrix
from churn_compass.trainer.datasets import Dataset, split_dataset, synth_dataset


def test_blobs_are_balanced_and_standardized():
    data = synth_dataset("blobs", 101, seed=0, num_classes=5, dims=3)
    assert data.n == 101
    assert data.dims == 3
    assert np.bincount(data.labels.labels).tolist() == [21, 20, 20, 20, 20]
    assert np.allclose(data.features.mean(axis=0), 0.0)
    assert np.allclose(data.features.std(axis=0), 1.0)


def test_synth_is_seeded():
    a = synth_dataset("spirals", 50, seed=3)
    b = synth_dataset("spirals", 50, seed=3)
    assert np.array_equal(a.features, b.features)
    assert a.num_classes == 2
    assert not np.array_equal(a.features, synth_dataset("spirals", 50, seed=4).features)


def test_file_dataset_draws_a_subset():
    rng = np.random.default_rng(0)
    with tempfile.TemporaryDirectory() as tmpdir:
        fpath = Path(tmpdir) / "x.lgt"
        lpath = Path(tmpdir) / "y.lbl"
        save_matrix(rng.normal(size=(40, 3)), fpath)
        save_labels(LabelVector(np.arange(40) % 4), lpath)
        data = synth_dataset("file", 25, seed=1, features_path=fpath, labels_path=lpath)
        assert data.n == 25
        assert data.num_classes == 4
        with pytest.raises(UsageError):
            synth_dataset("file", 25)
        with pytest.raises(InvalidInputError):
            synth_dataset("file", 41, features_path=fpath, labels_path=lpath)


def test_split_dataset_partitions():
    data = synth_dataset("blobs", 100, seed=2)
    parts = split_dataset(data, [50, 30, 20], seed=0)
    assert [p.n for p in parts] == [50, 30, 20]
    rows = np.vstack([p.features for p in parts])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, data.features))
    with pytest.raises(InvalidInputError):
        split_dataset(data, [80, 30])


def test_concat_and_validation():
    data = synth_dataset("blobs", 20, seed=0)
    assert data.concat(data).n == 40
    with pytest.raises(InvalidInputError):
        Dataset(np.array([[np.nan, 0.0]]), LabelVector([0]), 2)


if __name__ == "__main__":
    test_blobs_are_balanced_and_standardized()
    test_synth_is_seeded()
    test_file_dataset_draws_a_subset()
    test_split_dataset_partitions()
    test_concat_and_validation()

    print("✅ All dataset tests passed!")

"""Tests for file formats."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from churn_compass.errors import BadMagicError, CsvParseError, ShapeMismatchError, TruncatedFileError
from churn_compass.models import CheckpointSeries, LabelVector, LogitMatrix, MetaKind, MetaModel, ScoreKind, ScoreVector
from churn_compass.storage import (
    decode_matrix,
    encode_matrix,
    file_digest,
    load_labels,
    load_matrix,
    load_meta_model,
    load_mlp,
    load_scores,
    load_series,
    save_labels,
    save_matrix,
    save_meta_model,
    save_mlp,
    save_scores,
    save_series,
)
from churn_compass.trainer.network import init_mlp


def _f32(a):
    """Values that survive a float32 round trip exactly."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def test_matrix_binary_layout():
    """Test the 12-byte header followed by float32 rows."""
    raw = encode_matrix(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert raw[:4] == b"LGT1"
    assert len(raw) == 12 + 6 * 4
    assert decode_matrix(raw).tolist() == [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]


def test_matrix_round_trip_is_exact():
    data = _f32(np.random.default_rng(0).normal(size=(7, 4)))
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "m.lgt"
        save_matrix(LogitMatrix(data), path)
        first = path.read_bytes()
        loaded = load_matrix(path)
        assert np.array_equal(loaded.data, data)
        save_matrix(loaded, path)
        assert path.read_bytes() == first


def test_matrix_errors():
    raw = encode_matrix(np.ones((2, 2)))
    with pytest.raises(BadMagicError):
        decode_matrix(b"XXXX" + raw[4:])
    with pytest.raises(TruncatedFileError):
        decode_matrix(raw[:-1])
    with pytest.raises(ShapeMismatchError):
        decode_matrix(raw + b"\x00\x00\x00\x00")


def test_csv_matrix():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "m.csv"
        save_matrix(np.array([[0.5, -1.25]]), path)
        assert path.read_text().splitlines()[0] == "c0,c1"
        assert load_matrix(path).data.tolist() == [[0.5, -1.25]]

        bad = Path(tmpdir) / "bad.csv"
        bad.write_text("c0,c1\n1.0,2.0\n3.0\n")
        with pytest.raises(CsvParseError) as info:
            load_matrix(bad)
        assert info.value.line == 3


def test_labels_round_trip():
    labels = LabelVector(np.array([0, 3, 1, 2]))
    with tempfile.TemporaryDirectory() as tmpdir:
        for name in ("y.lbl", "y.csv"):
            path = Path(tmpdir) / name
            save_labels(labels, path)
            assert load_labels(path).labels.tolist() == [0, 3, 1, 2]
        raw = (Path(tmpdir) / "y.lbl").read_bytes()
        assert raw[:4] == b"LBL1"


def test_series_round_trip():
    series = CheckpointSeries(tuple(_f32(np.full((3, 2), t)) for t in range(1, 4)))
    with tempfile.TemporaryDirectory() as tmpdir:
        manifest = save_series(series, Path(tmpdir) / "ckpt")
        assert (Path(tmpdir) / "ckpt" / "epoch_0001.lgt").exists()
        from_manifest = load_series(manifest)
        from_dir = load_series(Path(tmpdir) / "ckpt")
        assert len(from_manifest) == 3
        assert np.array_equal(from_dir.stacked(), series.stacked())


def test_series_overwrite_drops_old_epochs():
    longer = CheckpointSeries(tuple(_f32(np.full((2, 2), t)) for t in range(1, 4)))
    shorter = CheckpointSeries(tuple(_f32(np.full((2, 2), -t)) for t in range(1, 3)))
    with tempfile.TemporaryDirectory() as tmpdir:
        directory = Path(tmpdir) / "ckpt"
        save_series(longer, directory)
        manifest = save_series(shorter, directory)
        assert not (directory / "epoch_0003.lgt").exists()
        assert len(load_series(directory)) == 2
        assert np.array_equal(load_series(directory).stacked(), load_series(manifest).stacked())
        assert np.array_equal(load_series(directory).stacked(), shorter.stacked())


def test_scores_round_trip():
    scores = ScoreVector(_f32([0.25, 0.5, 0.75]), ScoreKind.CONF)
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "s.csv"
        save_scores(scores, path)
        loaded = load_scores(path)
        assert loaded.kind is ScoreKind.CONF
        assert loaded.values.tolist() == [0.25, 0.5, 0.75]
        binary = Path(tmpdir) / "s.lgt"
        save_scores(scores, binary)
        assert load_scores(binary, kind=ScoreKind.CONF).values.tolist() == [0.25, 0.5, 0.75]


def test_meta_model_blob():
    model = MetaModel(
        kind=MetaKind.LINEAR_LOGISTIC,
        weights=(_f32(np.arange(8).reshape(4, 2) / 8.0),),
        biases=(np.array([0.5, -0.5]),),
    )
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "meta.amcm"
        save_meta_model(model, path)
        loaded = load_meta_model(path)
        assert loaded.kind is MetaKind.LINEAR_LOGISTIC
        assert np.array_equal(loaded.weights[0], model.weights[0])
        assert np.array_equal(loaded.biases[0], model.biases[0])


def test_mlp_blob():
    net = init_mlp((3, 4, 2), seed=1)
    net = net.with_params(_f32(net.flatten()))
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "net.mlp"
        save_mlp(net, path)
        loaded = load_mlp(path)
        assert loaded.sizes == (3, 4, 2)
        assert np.array_equal(loaded.flatten(), net.flatten())
        with pytest.raises(BadMagicError):
            load_meta_model(path)


def test_file_digest_changes_with_content():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "a.lgt"
        save_matrix(np.zeros((1, 2)), path)
        first = file_digest(path)
        assert len(first) == 64
        save_matrix(np.ones((1, 2)), path)
        assert file_digest(path) != first


if __name__ == "__main__":
    test_matrix_binary_layout()
    test_matrix_round_trip_is_exact()
    test_matrix_errors()
    test_csv_matrix()
    test_labels_round_trip()
    test_series_round_trip()
    test_series_overwrite_drops_old_epochs()
    test_scores_round_trip()
    test_meta_model_blob()
    test_mlp_blob()
    test_file_digest_changes_with_content()

    print("✅ All storage tests passed!")

"""Tests for run manifests."""

import tempfile
from pathlib import Path

import numpy as np

from churn_compass import __version__
from churn_compass.manifest import RunManifest, default_manifest_path, read_manifest
from churn_compass.storage import file_digest, save_matrix


def test_manifest_records_inputs_and_outputs():
    with tempfile.TemporaryDirectory() as tmpdir:
        data = Path(tmpdir) / "base.lgt"
        save_matrix(np.eye(2), data)
        ckpt = Path(tmpdir) / "ckpt"
        ckpt.mkdir()
        save_matrix(np.ones((2, 2)), ckpt / "epoch_0001.lgt")

        manifest = RunManifest("churn", config={"n_bins": 15}, seeds=[0])
        manifest.add_input(data)
        manifest.add_input(ckpt)
        manifest.add_output(Path(tmpdir) / "out.lgt")
        path = manifest.finish().write(Path(tmpdir) / "m.json")

        loaded = read_manifest(path)
        assert loaded["command"] == "churn"
        assert loaded["version"] == __version__
        assert loaded["inputs"][str(data)] == file_digest(data)
        assert str(ckpt / "epoch_0001.lgt") in loaded["inputs"]
        assert loaded["outputs"] == [str(Path(tmpdir) / "out.lgt")]
        assert loaded["finished"] is not None
        assert loaded["config"] == {"n_bins": 15}


def test_default_manifest_path():
    path = default_manifest_path("amc", root="/tmp/run")
    assert path == Path("/tmp/run/.churn-compass/manifest-amc.json")


if __name__ == "__main__":
    test_manifest_records_inputs_and_outputs()
    test_default_manifest_path()

    print("✅ All manifest tests passed!")

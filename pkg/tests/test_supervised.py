import numpy as np
import pytest

from ptztrack.envs import make_env_config
from ptztrack.nets import NetworkSpec
from ptztrack.supervised import (Dataset, generate_dataset, load_dataset,
                                 save_dataset, split_indices,
                                 supervised_train, targets_from_box)
from ptztrack.camera import BoundingBox


class TestTargets:
    def test_relloc_targets(self):
        t = targets_from_box("relloc", BoundingBox(30, 30, 90, 90), 120)
        assert t == pytest.approx([0.0, 0.0, 0.25])

    def test_detector_targets_normalized(self):
        t = targets_from_box("detector", BoundingBox(0, 30, 60, 120), 120)
        assert t == pytest.approx([0.0, 0.25, 0.5, 1.0])


class TestGeneration:
    def test_counts_and_visibility_labels(self):
        cfg = make_env_config("sc1", episode_len=2000)
        ds = generate_dataset(cfg, 60, "relloc", seed=3)
        assert len(ds) == 60
        assert ds.images.shape == (60, 120, 120)
        assert ds.targets.shape == (60, 3)
        assert np.all(ds.targets[:, 0] >= -1) and np.all(ds.targets[:, 0] <= 1)
        assert np.all(ds.targets[:, 2] >= 0) and np.all(ds.targets[:, 2] <= 1)

    def test_scale_diversity(self):
        cfg = make_env_config("sc1", episode_len=2000)
        ds = generate_dataset(cfg, 120, "relloc", seed=4)
        sizes = ds.targets[:, 2]
        assert sizes.max() / max(sizes.min(), 1e-9) > 4.0

    def test_deterministic(self):
        cfg = make_env_config("sc1", episode_len=2000)
        a = generate_dataset(cfg, 25, "detector", seed=9)
        b = generate_dataset(cfg, 25, "detector", seed=9)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.targets, b.targets)

    def test_unknown_task(self):
        cfg = make_env_config("sc1")
        with pytest.raises(ValueError):
            generate_dataset(cfg, 5, "segmentation", seed=0)


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(task="relloc", obs_size=120,
                     images=(rng.random((7, 120, 120)) * 255).astype(np.uint8),
                     targets=rng.random((7, 3)).astype(np.float32))
        path = str(tmp_path / "d.bin")
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.task == "relloc"
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.targets, ds.targets)

    def test_sidecar_count(self, tmp_path):
        import json
        ds = Dataset(task="detector", obs_size=120,
                     images=np.zeros((100, 120, 120), dtype=np.uint8),
                     targets=np.zeros((100, 4), dtype=np.float32))
        path = str(tmp_path / "d.bin")
        save_dataset(ds, path)
        meta = json.load(open(path + ".json"))
        assert meta["count"] == 100
        assert meta["target_dim"] == 4

    def test_truncated_rejected(self, tmp_path):
        ds = Dataset(task="relloc", obs_size=120,
                     images=np.zeros((3, 120, 120), dtype=np.uint8),
                     targets=np.zeros((3, 3), dtype=np.float32))
        path = str(tmp_path / "d.bin")
        save_dataset(ds, path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-10])
        with pytest.raises(ValueError):
            load_dataset(path)


class TestSplit:
    def test_deterministic_80_20(self):
        train, val = split_indices(1000)
        train2, val2 = split_indices(1000)
        assert np.array_equal(train, train2)
        assert np.array_equal(val, val2)
        assert len(train) + len(val) == 1000
        assert 0.15 < len(val) / 1000 < 0.25
        assert len(np.intersect1d(train, val)) == 0


class TestTraining:
    def test_perfect_predictions_zero_loss(self):
        # targets equal to a constant the net can express exactly after a
        # couple of epochs of fitting a constant function
        rng = np.random.default_rng(1)
        images = (rng.random((50, 120, 120)) * 255).astype(np.uint8)
        targets = rng.normal(size=(50, 3)).astype(np.float32)
        ds = Dataset("relloc", 120, images, targets)
        spec = NetworkSpec(heads="regression3")
        result = supervised_train(spec, ds, epochs=1, seed=0)
        assert result.curve[0]["val_loss"] > 0.0

    def test_learns_linear_structure(self):
        # images whose mean intensity encodes the target: a net must beat
        # the constant mean predictor by a wide margin
        rng = np.random.default_rng(2)
        n = 300
        levels = rng.random(n).astype(np.float32)
        images = np.clip(
            (levels[:, None, None] * 200 + rng.normal(0, 4, (n, 120, 120))),
            0, 255).astype(np.uint8)
        targets = np.stack([levels * 2 - 1, -(levels * 2 - 1),
                            levels], axis=1).astype(np.float32)
        ds = Dataset("relloc", 120, images, targets)
        spec = NetworkSpec(heads="regression3")
        result = supervised_train(spec, ds, epochs=6, seed=0,
                                  learning_rate=1e-3)
        assert result.curve[-1]["val_loss"] < 0.5 * result.baseline_val_mse

    def test_loss_curve_deterministic(self):
        rng = np.random.default_rng(3)
        images = (rng.random((40, 120, 120)) * 255).astype(np.uint8)
        targets = rng.random((40, 3)).astype(np.float32)
        ds = Dataset("relloc", 120, images, targets)
        spec = NetworkSpec(heads="regression3")
        a = supervised_train(spec, ds, epochs=2, seed=5)
        b = supervised_train(spec, ds, epochs=2, seed=5)
        assert a.curve == b.curve
        assert np.array_equal(a.params, b.params)

    def test_empty_dataset_rejected(self):
        ds = Dataset("relloc", 120, np.zeros((0, 120, 120), dtype=np.uint8),
                     np.zeros((0, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            supervised_train(NetworkSpec(heads="regression3"), ds, 1, 0)

    def test_head_task_mismatch_rejected(self):
        ds = Dataset("relloc", 120, np.zeros((4, 120, 120), dtype=np.uint8),
                     np.zeros((4, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            supervised_train(NetworkSpec(heads="regression4"), ds, 1, 0)

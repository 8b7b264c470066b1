import gzip
import struct

import numpy as np
import pytest

from rank1cnn.data import (
    CHECKPOINT_HEADER,
    CheckpointError,
    Dataset,
    IdxFormatError,
    batches,
    load_checkpoint,
    load_idx,
    save_checkpoint,
    synth_blobs,
)
from rank1cnn.network import NetworkSpec, build_network, conv, dense, flatten, maxpool, relu


def write_idx_pair(tmp_path, images, labels, gz=False, image_magic=0x803,
                   label_magic=0x801):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img_bytes = struct.pack(">IIII", image_magic, *images.shape) + images.tobytes()
    lab_bytes = struct.pack(">II", label_magic, labels.shape[0]) + labels.tobytes()
    suffix = ".gz" if gz else ""
    ip = tmp_path / f"images.idx{suffix}"
    lp = tmp_path / f"labels.idx{suffix}"
    opener = gzip.open if gz else open
    with opener(ip, "wb") as fh:
        fh.write(img_bytes)
    with opener(lp, "wb") as fh:
        fh.write(lab_bytes)
    return ip, lp


class TestDatasetValidation:
    def test_happy_path(self):
        data = Dataset(np.zeros((4, 1, 2, 2)), np.array([0, 1, 0, 1]), 2)
        assert len(data) == 4
        assert data.images.dtype == np.float64

    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((4, 2, 2)), np.zeros(4, dtype=int), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 1, 2, 2)), np.zeros(0, dtype=int), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1, 2, 2)), np.zeros(3, dtype=int), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1, 2, 2)), np.array([0, 5]), 2)
        with pytest.raises(ValueError):
            Dataset(np.full((2, 1, 2, 2), 1.5), np.array([0, 1]), 2)
        with pytest.raises(ValueError):
            Dataset(np.full((2, 1, 2, 2), np.nan), np.array([0, 1]), 2)


class TestLoadIdx:
    def test_round_trip_plain(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (5, 4, 3), dtype=np.uint8)
        labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
        ip, lp = write_idx_pair(tmp_path, images, labels)
        data = load_idx(ip, lp)
        assert data.images.shape == (5, 1, 4, 3)
        assert data.class_count == 3
        np.testing.assert_allclose(data.images[:, 0], images / 255.0)
        np.testing.assert_array_equal(data.labels, labels)

    def test_round_trip_gzip(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, (3, 2, 2), dtype=np.uint8)
        labels = np.array([1, 0, 1], dtype=np.uint8)
        ip, lp = write_idx_pair(tmp_path, images, labels, gz=True)
        data = load_idx(ip, lp, class_count=4)
        assert data.class_count == 4
        np.testing.assert_allclose(data.images[:, 0], images / 255.0)

    def test_wrong_magic(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1],
                                image_magic=0x802)
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx(ip, lp)

    def test_truncated_payload(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1])
        ip.write_bytes(ip.read_bytes()[:-3])
        with pytest.raises(IdxFormatError, match="data bytes"):
            load_idx(ip, lp)

    def test_truncated_header(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1])
        ip.write_bytes(ip.read_bytes()[:9])
        with pytest.raises(IdxFormatError, match="header"):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        other = tmp_path / "other"
        other.mkdir()
        ip, _ = write_idx_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1, 0])
        _, lp = write_idx_pair(other, np.zeros((2, 2, 2)), [0, 1])
        with pytest.raises(IdxFormatError, match="labels"):
            load_idx(ip, lp)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_idx(tmp_path / "nope.idx", tmp_path / "nope2.idx")


class TestSynthBlobs:
    def test_shapes_and_balance(self):
        data = synth_blobs(4, 10, dims=(2, 5, 6), seed=3)
        assert data.images.shape == (40, 2, 5, 6)
        assert data.class_count == 4
        counts = np.bincount(data.labels, minlength=4)
        np.testing.assert_array_equal(counts, [10, 10, 10, 10])
        assert data.images.min() >= 0.0 and data.images.max() <= 1.0

    def test_seed_determinism(self):
        a = synth_blobs(3, 5, seed=4)
        b = synth_blobs(3, 5, seed=4)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)
        c = synth_blobs(3, 5, seed=5)
        assert not np.array_equal(a.images, c.images)

    def test_splits_share_templates(self):
        train = synth_blobs(3, 200, seed=6, noise=0.05)
        test = synth_blobs(3, 50, seed=7, noise=0.05)
        centroids = np.stack([
            train.images[train.labels == c].mean(axis=0) for c in range(3)
        ])
        flat = test.images.reshape(len(test), -1)
        dists = ((flat[:, None, :] - centroids.reshape(3, -1)[None]) ** 2).sum(axis=2)
        accuracy = float((np.argmin(dists, axis=1) == test.labels).mean())
        assert accuracy >= 0.99

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_blobs(1, 5)
        with pytest.raises(ValueError):
            synth_blobs(3, 0)
        with pytest.raises(ValueError):
            synth_blobs(3, 5, dims=(1, 0, 8))


class TestBatches:
    def test_covers_everything_once_in_order(self):
        data = synth_blobs(3, 4, seed=8)
        seen = []
        for xb, yb in batches(data, 5):
            assert len(xb) == len(yb) <= 5
            seen.extend(yb.tolist())
        assert seen == data.labels.tolist()

    def test_shuffle_is_a_permutation(self):
        data = synth_blobs(3, 4, seed=9)
        flat = [y for _, yb in batches(data, 4, shuffle_seed=1) for y in yb]
        assert sorted(flat) == sorted(data.labels.tolist())
        assert flat != data.labels.tolist()
        again = [y for _, yb in batches(data, 4, shuffle_seed=1) for y in yb]
        assert flat == again

    def test_batch_size_validation(self):
        data = synth_blobs(2, 2, seed=10)
        with pytest.raises(ValueError):
            list(batches(data, 0))


def small_net(mode="rank1", seed=11):
    spec = NetworkSpec("ckpt-net", (1, 8, 8), 3, [
        conv(4), relu(), maxpool(), flatten(), dense(3),
    ])
    return build_network(spec, mode, np.random.default_rng(seed))


class TestCheckpoints:
    @pytest.mark.parametrize("mode", ["standard", "rank1", "sequential-1d"])
    def test_round_trip_is_bit_exact(self, tmp_path, mode):
        net = small_net(mode)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, net, seed=42)
        loaded, meta = load_checkpoint(path)
        assert meta["mode"] == mode
        assert meta["seed"] == 42
        assert loaded.spec == net.spec
        x = np.random.default_rng(12).uniform(0, 1, (4, 1, 8, 8))
        np.testing.assert_array_equal(loaded.forward(x), net.forward(x))

    def test_header_written(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_net())
        assert path.read_bytes().startswith(CHECKPOINT_HEADER)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"RANK1CKPT 2\nrest")
        with pytest.raises(CheckpointError, match="header"):
            load_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_net())
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 7])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_missing_meta_rejected(self, tmp_path):
        path = tmp_path / "bare.ckpt"
        path.write_bytes(CHECKPOINT_HEADER)
        with pytest.raises(CheckpointError, match="metadata"):
            load_checkpoint(path)

    def test_parameterless_network_refused(self, tmp_path):
        spec = NetworkSpec("empty", (1, 4, 4), 16, [flatten()])
        net = build_network(spec, "standard")
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "empty.ckpt", net)

    def test_trained_rank1_checkpoint_keeps_factors(self, tmp_path):
        from rank1cnn.data import synth_blobs as blobs
        from rank1cnn.training import TrainConfig, train

        spec = NetworkSpec("ckpt-net", (1, 8, 8), 3, [
            conv(4), relu(), maxpool(), flatten(), dense(3),
        ])
        data = blobs(3, 20, seed=13)
        net, _ = train(spec, data, TrainConfig(0.1, batch_size=16, epochs=2,
                                               seed=13, mode="rank1"))
        path = tmp_path / "trained.ckpt"
        save_checkpoint(path, net)
        loaded, _ = load_checkpoint(path)
        orig = net.layers[0].rank1_filters
        back = loaded.layers[0].rank1_filters
        for a, b in zip(orig, back):
            np.testing.assert_array_equal(a.vertical, b.vertical)
            np.testing.assert_array_equal(a.horizontal, b.horizontal)
            np.testing.assert_array_equal(a.lateral, b.lateral)
            np.testing.assert_array_equal(a.composed, b.composed)

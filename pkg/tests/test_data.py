import gzip
import struct

import numpy as np
import pytest

from conftest import mnist_dir
from lipsort import data as dm
from lipsort.errors import ConsistencyError, FormatError, InvalidArgument, ParseError


class TestSpiral:
    def test_anchor(self):
        for k in (0, 1):
            np.testing.assert_allclose(dm.spiral_point(0.0, k, 1.75), [0.0, 0.0], atol=1e-16)
        # radius equals the parameter
        assert np.linalg.norm(dm.spiral_point(0.6, 1, 1.75)) == pytest.approx(0.6)

    def test_noise_free_classes_disjoint(self):
        ds = dm.gen_spiral(dm.SpiralSpec(points_per_class=300, noise_std=0.0, seed=2))
        a = ds.inputs[ds.labels == 0]
        b = ds.inputs[ds.labels == 1]
        d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        assert d.min() > 0

    def test_noise_free_bounded(self):
        ds = dm.gen_spiral(dm.SpiralSpec(noise_std=0.0))
        assert np.all(np.abs(ds.inputs) <= 1.0)

    def test_noisy_mostly_bounded(self):
        s = dm.SpiralSpec(noise_std=0.05)
        ds = dm.gen_spiral(s)
        inside = np.all(np.abs(ds.inputs) <= 1 + 3 * s.noise_std, axis=1)
        assert inside.mean() >= 0.997

    def test_deterministic(self):
        a = dm.gen_spiral(dm.SpiralSpec(seed=9))
        b = dm.gen_spiral(dm.SpiralSpec(seed=9))
        assert a.inputs.tobytes() == b.inputs.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_shapes(self):
        ds = dm.gen_spiral(dm.SpiralSpec(points_per_class=10))
        assert ds.inputs.shape == (20, 2) and ds.num_classes == 2
        assert np.bincount(ds.labels).tolist() == [10, 10]

    def test_bad_spec(self):
        with pytest.raises(InvalidArgument):
            dm.SpiralSpec(points_per_class=0)


@pytest.fixture
def idx_pair(tmp_path, rng):
    images = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    labels = np.array([3, 7], dtype=np.uint8)
    dm.write_idx_images(tmp_path / "img", images)
    dm.write_idx_labels(tmp_path / "lbl", labels)
    return tmp_path / "img", tmp_path / "lbl", images, labels


class TestIdx:
    def test_round_trip(self, idx_pair):
        img, lbl, images, labels = idx_pair
        ds = dm.load_mnist(img, lbl)
        assert ds.inputs.shape == (2, 784)
        np.testing.assert_array_equal(ds.inputs * 255.0, images.reshape(2, -1).astype(float))
        np.testing.assert_array_equal(ds.inputs, images.reshape(2, -1) / 255.0)
        np.testing.assert_array_equal(ds.labels, labels)

    def test_big_endian_header(self, idx_pair):
        raw = idx_pair[0].read_bytes()
        assert struct.unpack(">4I", raw[:16]) == (0x803, 2, 28, 28)

    def test_gzip(self, idx_pair, tmp_path):
        img, lbl, images, _ = idx_pair
        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(img.read_bytes()))
        np.testing.assert_array_equal(dm.load_mnist(gz, lbl).inputs, dm.load_mnist(img, lbl).inputs)

    def test_wrong_magic(self, idx_pair):
        img, lbl, *_ = idx_pair
        with pytest.raises(FormatError):
            dm.load_mnist(lbl, lbl)

    def test_count_mismatch(self, idx_pair, tmp_path):
        img, *_ = idx_pair
        dm.write_idx_labels(tmp_path / "three", np.array([1, 2, 3]))
        with pytest.raises(ConsistencyError):
            dm.load_mnist(img, tmp_path / "three")

    def test_truncated(self, idx_pair):
        img, lbl, *_ = idx_pair
        img.write_bytes(img.read_bytes()[:-10])
        with pytest.raises(ParseError, match="truncated"):
            dm.load_mnist(img, lbl)

    def test_trailing_bytes(self, idx_pair):
        img, lbl, *_ = idx_pair
        img.write_bytes(img.read_bytes() + b"\0")
        with pytest.raises(ParseError):
            dm.load_mnist(img, lbl)

    def test_limit(self, idx_pair):
        img, lbl, *_ = idx_pair
        assert len(dm.load_mnist(img, lbl, limit=1)) == 1


@pytest.mark.skipif(mnist_dir() is None, reason="MNIST files not present (set LIPSORT_MNIST_DIR)")
class TestRealMnist:
    def test_train_set(self):
        ds = dm.load_mnist_dir(mnist_dir(), "train")
        assert ds.inputs.shape == (60000, 784)
        assert ds.labels.min() == 0 and ds.labels.max() == 9
        assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0

    def test_test_set(self):
        assert len(dm.load_mnist_dir(mnist_dir(), "test")) == 10000


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = dm.gen_spiral(dm.SpiralSpec(points_per_class=20))
        dm.save_csv(ds, tmp_path / "s.csv")
        back = dm.load_csv(tmp_path / "s.csv")
        assert back.inputs.tobytes() == ds.inputs.tobytes()
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x0,x1,label"

    @pytest.mark.parametrize("text", ["a,b\n1,2\n", "x0,label\n1\n", "x0,label\nfoo,1\n"])
    def test_malformed(self, tmp_path, text):
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(ParseError):
            dm.load_csv(tmp_path / "bad.csv")


class TestDataset:
    def test_split(self):
        ds = dm.gen_spiral(dm.SpiralSpec(points_per_class=5))
        a, b = ds.split(3)
        assert len(a) == 3 and len(b) == 7

    def test_label_range(self):
        with pytest.raises(InvalidArgument):
            dm.LabeledDataset(np.zeros((2, 1)), [0, 5], 2)

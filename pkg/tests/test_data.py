import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fdfa.core import RngStream
from fdfa.data import (
    CountMismatch,
    Dataset,
    MagicMismatch,
    TruncatedFile,
    duplicate_inputs,
    load_bundled_mnist,
    load_mnist_idx,
    pool_inputs,
    save_dataset_idx,
    split_and_shuffle,
    synthetic_gaussian,
    write_idx_images,
    write_idx_labels,
)


@pytest.fixture
def fixture_pair(tmp_path):
    """Four 3x2 images built byte by byte, one of them saturated."""
    pixels = np.array([[[0, 1], [2, 3], [4, 5]],
                       [[255, 255], [255, 255], [255, 255]],
                       [[10, 20], [30, 40], [50, 60]],
                       [[7, 0], [0, 7], [7, 0]]], dtype=np.uint8)
    labels = np.array([3, 1, 4, 1], dtype=np.uint8)
    img = tmp_path / "img-idx3-ubyte"
    lab = tmp_path / "lab-idx1-ubyte"
    img.write_bytes(struct.pack(">IIII", 2051, 4, 3, 2) + pixels.tobytes())
    lab.write_bytes(struct.pack(">II", 2049, 4) + labels.tobytes())
    return img, lab, pixels, labels


class TestIdx:
    def test_four_image_fixture(self, fixture_pair):
        img, lab, pixels, labels = fixture_pair
        ds = load_mnist_idx(img, lab)
        assert ds.inputs.shape == (4, 6)
        assert ds.labels.tolist() == labels.tolist()
        np.testing.assert_allclose(ds.inputs[0], np.arange(6) / 255.0)

    def test_saturated_pixel_is_one(self, fixture_pair):
        img, lab, *_ = fixture_pair
        assert np.all(load_mnist_idx(img, lab).inputs[1] == 1.0)

    def test_swapped_files(self, fixture_pair):
        img, lab, *_ = fixture_pair
        with pytest.raises(MagicMismatch):
            load_mnist_idx(lab, img)

    def test_label_file_with_image_magic(self, fixture_pair, tmp_path):
        img, _, _, labels = fixture_pair
        bad = tmp_path / "bad"
        bad.write_bytes(struct.pack(">II", 2051, 4) + labels.tobytes())
        with pytest.raises(MagicMismatch):
            load_mnist_idx(img, bad)

    def test_truncated_payload(self, fixture_pair, tmp_path):
        img, lab, *_ = fixture_pair
        cut = tmp_path / "cut"
        cut.write_bytes(img.read_bytes()[:-3])
        with pytest.raises(TruncatedFile):
            load_mnist_idx(cut, lab)

    def test_truncated_header(self, fixture_pair, tmp_path):
        _, lab, *_ = fixture_pair
        cut = tmp_path / "cut"
        cut.write_bytes(b"\x00\x00\x08")
        with pytest.raises(TruncatedFile):
            load_mnist_idx(cut, lab)

    def test_count_mismatch(self, fixture_pair, tmp_path):
        img, _, _, labels = fixture_pair
        short = tmp_path / "short"
        write_idx_labels(short, labels[:3])
        with pytest.raises(CountMismatch):
            load_mnist_idx(img, short)

    def test_gzip(self, fixture_pair, tmp_path):
        img, lab, *_ = fixture_pair
        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(img.read_bytes()))
        assert np.array_equal(load_mnist_idx(gz, lab).inputs, load_mnist_idx(img, lab).inputs)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.just(2), st.just(3))), st.booleans())
    def test_round_trip(self, tmp_path_factory, pixels, compress):
        d = tmp_path_factory.mktemp("rt")
        suffix = ".gz" if compress else ""
        labels = (np.arange(len(pixels)) % 10).astype(np.uint8)
        ds = Dataset(pixels.reshape(len(pixels), -1) / 255.0, labels, 10)
        save_dataset_idx(ds, d / f"i{suffix}", d / f"l{suffix}", (2, 3))
        back = load_mnist_idx(d / f"i{suffix}", d / f"l{suffix}")
        assert np.array_equal(back.inputs, ds.inputs)
        assert np.array_equal(back.labels, ds.labels)

    def test_writer_rejects_wrong_dtype(self, tmp_path):
        with pytest.raises(ValueError):
            write_idx_images(tmp_path / "x", np.zeros((1, 2, 2)))

    def test_bundled_subset(self):
        tr, te = load_bundled_mnist("train"), load_bundled_mnist("test")
        assert (len(tr), len(te)) == (10_000, 2_000)
        assert tr.dim == 784 and tr.inputs.min() == 0.0 and tr.inputs.max() == 1.0
        # the official training set starts with the digits 5 0 4 1 9
        assert tr.labels[:5].tolist() == [5, 0, 4, 1, 9]
        assert set(np.unique(te.labels)) == set(range(10))


class TestTransforms:
    def test_duplicate_once_is_identity(self):
        ds = Dataset(np.arange(6.0).reshape(2, 3), [0, 1], 2)
        same = duplicate_inputs(ds, 1)
        assert np.array_equal(same.inputs, ds.inputs) and np.array_equal(same.labels, ds.labels)

    def test_duplicate_twice(self):
        ds = Dataset([[1.0, 2.0]], [0], 2)
        assert duplicate_inputs(ds, 2).inputs.tolist() == [[1.0, 2.0, 1.0, 2.0]]

    @given(st.integers(1, 6))
    def test_duplicate_norms_and_shape(self, k):
        ds = Dataset(RngStream(1).normal((3, 4)), [0, 1, 0], 2)
        dup = duplicate_inputs(ds, k)
        assert dup.inputs.shape == (3, 4 * k)
        assert np.array_equal(dup.labels, ds.labels)
        np.testing.assert_allclose(np.linalg.norm(dup.inputs, axis=1),
                                   np.sqrt(k) * np.linalg.norm(ds.inputs, axis=1), rtol=1e-12)

    def test_duplicate_rejects_zero(self):
        with pytest.raises(ValueError):
            duplicate_inputs(Dataset([[1.0]], [0], 1), 0)

    def test_pool(self):
        ds = Dataset(np.arange(16.0).reshape(1, 16), [0], 1)
        pooled = pool_inputs(ds, (4, 4), (2, 2))
        assert pooled.inputs.tolist() == [[2.5, 4.5, 10.5, 12.5]]


class TestSynthetic:
    def test_same_seed_same_data(self):
        a = synthetic_gaussian(50, 3, 4, RngStream(5))
        b = synthetic_gaussian(50, 3, 4, RngStream(5))
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)

    def test_roughly_balanced(self):
        ds = synthetic_gaussian(100, 5, 2, RngStream(6))
        assert abs(int(np.sum(ds.labels == 0)) - 50) <= 15

    def test_dimension(self):
        ds = synthetic_gaussian(20, 7, 3, RngStream(7))
        assert ds.inputs.shape == (20, 7) and ds.dim == 7

    def test_classes_separate(self):
        ds = synthetic_gaussian(400, 4, 4, RngStream(8), separation=6.0)
        means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
        assert np.all(np.argmax(means, axis=1) == np.arange(4))


class TestSplit:
    def test_ninety_ten(self):
        ds = synthetic_gaussian(100, 2, 2, RngStream(1))
        a, b = split_and_shuffle(ds, 0.9, RngStream(2))
        assert (len(a), len(b)) == (90, 10)

    def test_partition(self):
        ds = Dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 3, 3)
        a, b = split_and_shuffle(ds, 0.7, RngStream(3))
        rows = sorted(map(tuple, np.vstack([a.inputs, b.inputs])))
        assert rows == sorted(map(tuple, ds.inputs))

    def test_same_seed_same_split(self):
        ds = synthetic_gaussian(30, 2, 2, RngStream(1))
        a1, _ = split_and_shuffle(ds, 0.5, RngStream(4))
        a2, _ = split_and_shuffle(ds, 0.5, RngStream(4))
        assert np.array_equal(a1.inputs, a2.inputs)

    @pytest.mark.parametrize("frac", [0.0, 1.0, 0.001])
    def test_rejects_empty_side(self, frac):
        with pytest.raises(ValueError):
            split_and_shuffle(synthetic_gaussian(10, 2, 2, RngStream(1)), frac, RngStream(0))


class TestDatasetValidation:
    def test_label_range(self):
        with pytest.raises(ValueError):
            Dataset([[0.0]], [3], 2)

    def test_count(self):
        with pytest.raises(ValueError):
            Dataset([[0.0], [1.0]], [0], 2)

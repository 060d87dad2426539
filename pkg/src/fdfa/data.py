"""Datasets: IDX (MNIST) files, synthetic Gaussian classes, transforms."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import RngStream

IMAGE_MAGIC = 0x00000803  # 2051
LABEL_MAGIC = 0x00000801  # 2049


class IdxError(ValueError):
    """Malformed IDX file."""


class MagicMismatch(IdxError):
    pass


class TruncatedFile(IdxError):
    pass


class CountMismatch(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n_samples, dim), values in [0, 1] for image data
    labels: np.ndarray  # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValueError(f"{inputs.shape[0]} inputs but labels of shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.inputs[:n], self.labels[:n], self.n_classes)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: header shorter than 8 bytes")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise MagicMismatch(f"{path}: magic {found} != expected {magic}")
    ndim = found & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFile(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Parse an IDX image/label pair; pixels are scaled by 1/255."""
    images = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64), n_classes)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError("images must be a (n, rows, cols) uint8 array")
    _write(path, struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.dtype != np.uint8:
        raise ValueError("labels must be a 1-d uint8 array")
    _write(path, struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


def _write(path, payload: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive byte-identical across runs
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(payload)
    else:
        path.write_bytes(payload)


def save_dataset_idx(ds: Dataset, images_path, labels_path, shape: tuple) -> None:
    """Write a dataset of [0, 1] pixel values as an IDX pair."""
    pix = np.rint(ds.inputs * 255.0)
    if np.any(np.abs(pix - ds.inputs * 255.0) > 1e-9):
        raise ValueError("inputs are not multiples of 1/255")
    write_idx_images(images_path, pix.astype(np.uint8).reshape((len(ds),) + tuple(shape)))
    write_idx_labels(labels_path, ds.labels.astype(np.uint8))


BUNDLED_FILES = {
    "train": ("mnist-train10k-images-idx3-ubyte.gz", "mnist-train10k-labels-idx1-ubyte.gz"),
    "test": ("mnist-test2k-images-idx3-ubyte.gz", "mnist-test2k-labels-idx1-ubyte.gz"),
}


def load_bundled_mnist(split: str = "train") -> Dataset:
    """The MNIST subset shipped with the package.

    ``train`` is the first 10,000 images of the official training set and
    ``test`` the first 2,000 of the official test set.
    """
    images, labels = BUNDLED_FILES[split]
    base = resources.files("fdfa") / "datasets"
    with resources.as_file(base / images) as ip, resources.as_file(base / labels) as lp:
        return load_mnist_idx(ip, lp)


def duplicate_inputs(ds: Dataset, k: int) -> Dataset:
    """Concatenate every input with itself ``k`` times."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return Dataset(np.tile(ds.inputs, (1, k)), ds.labels.copy(), ds.n_classes)


def pool_inputs(ds: Dataset, shape: tuple, out_shape: tuple) -> Dataset:
    """Average-pool square images down to ``out_shape`` (tiny test networks)."""
    rows, cols = shape
    orow, ocol = out_shape
    if rows % orow or cols % ocol:
        raise ValueError(f"{shape} does not divide into {out_shape}")
    imgs = ds.inputs.reshape(len(ds), orow, rows // orow, ocol, cols // ocol)
    return Dataset(imgs.mean(axis=(2, 4)).reshape(len(ds), -1), ds.labels.copy(), ds.n_classes)


def synthetic_gaussian(n_samples: int, dim: int, n_classes: int, rng: RngStream,
                       separation: float = 3.0) -> Dataset:
    """Isotropic unit-variance Gaussian classes with well-separated fixed means.

    Class ``c`` is centred at ``separation * e_(c mod dim)``, signed by
    ``(-1)^(c // dim)`` so more classes than dimensions still separate.
    Labels are drawn uniformly.
    """
    if min(n_samples, dim, n_classes) < 1:
        raise ValueError("n_samples, dim and n_classes must be >= 1")
    means = np.zeros((n_classes, dim))
    for c in range(n_classes):
        means[c, c % dim] = separation * (-1.0) ** (c // dim)
    labels = rng.integers(0, n_classes, size=n_samples)
    inputs = means[labels] + rng.normal((n_samples, dim))
    return Dataset(inputs, labels, n_classes)


def split_and_shuffle(ds: Dataset, train_fraction: float, rng: RngStream):
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(round(train_fraction * len(ds)))
    if n_train == 0 or n_train == len(ds):
        raise ValueError(f"split of {len(ds)} samples at {train_fraction} leaves an empty side")
    perm = rng.permutation(len(ds))
    a, b = perm[:n_train], perm[n_train:]
    return (Dataset(ds.inputs[a], ds.labels[a], ds.n_classes),
            Dataset(ds.inputs[b], ds.labels[b], ds.n_classes))

"""Build the bundled MNIST subset from the original IDX files.

Usage: python scripts/make_mnist_subset.py DIR

DIR holds the four uncompressed files train-images-idx3-ubyte,
train-labels-idx1-ubyte, t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte
(the npm package ``mnist-data`` ships them under ``data/``).  The first
10,000 training and the first 2,000 test images are written, gzipped, to
``src/fdfa/datasets``.
"""
import sys
from pathlib import Path

import numpy as np

from fdfa.data import load_mnist_idx, save_dataset_idx

OUT = Path(__file__).resolve().parents[1] / "src" / "fdfa" / "datasets"
SIZES = {"train": 10_000, "test": 2_000}
SOURCES = {"train": "train", "test": "t10k"}


def main(src):
    src = Path(src)
    OUT.mkdir(parents=True, exist_ok=True)
    for split, n in SIZES.items():
        prefix = SOURCES[split]
        ds = load_mnist_idx(src / f"{prefix}-images-idx3-ubyte", src / f"{prefix}-labels-idx1-ubyte").subset(n)
        save_dataset_idx(ds, OUT / f"mnist-{split}{n // 1000}k-images-idx3-ubyte.gz",
                         OUT / f"mnist-{split}{n // 1000}k-labels-idx1-ubyte.gz", (28, 28))
        print(split, len(ds), np.bincount(ds.labels, minlength=10))


if __name__ == "__main__":
    main(sys.argv[1])

#!/usr/bin/env python3
"""Rebuild gzip'd IDX files from the digits bundled with the npm `mnist` package.

The package ships 10,000 MNIST digits as per-class JSON arrays of pixel values
rounded to three decimals. Rounding back to bytes recovers the original
8-bit pixels exactly (1/255 is coarser than the 1e-3 quantization).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

TEST_COUNT = 2000


def write_idx(path, images, labels_path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with gzip.GzipFile(labels_path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    images, labels = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        arr = np.rint(np.asarray(flat, dtype=np.float64) * 255.0).reshape(-1, 784)
        assert arr.min() >= 0 and arr.max() <= 255
        images.append(arr)
        labels.append(np.full(len(arr), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    test, train = slice(0, TEST_COUNT), slice(TEST_COUNT, None)
    write_idx(dst / "train-images-idx3-ubyte.gz", images[train],
              dst / "train-labels-idx1-ubyte.gz", labels[train])
    write_idx(dst / "t10k-images-idx3-ubyte.gz", images[test],
              dst / "t10k-labels-idx1-ubyte.gz", labels[test])
    print(f"train={len(labels) - TEST_COUNT} test={TEST_COUNT} -> {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])

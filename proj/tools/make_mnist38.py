#!/usr/bin/env python3
"""Builds the MNIST 3-vs-8 IDX files shipped under data/mnist38.

Source: the 5000-image MNIST subset bundled with the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per digit, BSD-3-Clause).
Only digits 3 and 8 are kept. The first 400 images of each digit (in file
order) form the training split, the remaining 100 the test split.

    pip download --no-deps mlxtend -d /tmp/mlx
    python3 tools/make_mnist38.py /tmp/mlx/mlxtend-*.whl data/mnist38
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")
    pixels, labels = table[:, :-1], table[:, -1].astype(int)
    train, test = [], []
    for digit in (3, 8):
        idx = np.flatnonzero(labels == digit)
        train.extend(idx[:400])
        test.extend(idx[400:])
    for name, rows in (("train", sorted(train)), ("t10k", sorted(test))):
        write_idx_images(f"{out}/{name}-images-idx3-ubyte", pixels[rows])
        write_idx_labels(f"{out}/{name}-labels-idx1-ubyte", labels[rows])


if __name__ == "__main__":
    main()

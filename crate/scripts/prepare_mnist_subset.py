#!/usr/bin/env python3
"""Convert the 10,000-digit MNIST sample shipped in the `mnist` npm package
into IDX files (the format of the official MNIST distribution).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/prepare_mnist_subset.py package/src/digits data/mnist-subset

Writes train-{images,labels} (8,000 digits) and t10k-{images,labels}
(2,000 digits). The split is a fixed permutation so the output is
reproducible byte for byte.
"""
import json
import random
import struct
import sys
from pathlib import Path

TEST_COUNT = 2000
SEED = 20200101


def load(digits_dir):
    samples = []
    for label in range(10):
        data = json.loads((Path(digits_dir) / f"{label}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(0, len(data), 784):
            pixels = bytes(round(v * 255) for v in data[i : i + 784])
            samples.append((pixels, label))
    return samples


def write_idx(out_dir, prefix, samples):
    n = len(samples)
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in samples))


def main():
    digits_dir, out_dir = sys.argv[1], Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load(digits_dir)
    random.Random(SEED).shuffle(samples)
    write_idx(out_dir, "t10k", samples[:TEST_COUNT])
    write_idx(out_dir, "train", samples[TEST_COUNT:])
    print(f"wrote {len(samples) - TEST_COUNT} train / {TEST_COUNT} test digits to {out_dir}")


if __name__ == "__main__":
    main()

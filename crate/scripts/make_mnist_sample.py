#!/usr/bin/env python3
"""Build a small MNIST subset in gzipped IDX format.

Source: the `mnist` npm package (MIT), which ships roughly 1000 images per
digit as JSON arrays of byte/255 values rounded to three decimals. The
rounding is invertible, so original bytes are recovered exactly.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_sample.py package/src/digits data/mnist-sample
"""
import gzip
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_DIGIT = 200
TEST_PER_DIGIT = 100
SIDE = 28


def load_digit(path):
    values = json.loads(path.read_text())["data"]
    raw = bytes(round(v * 255) for v in values)
    size = SIDE * SIDE
    return [raw[i : i + size] for i in range(0, len(raw), size)]


def interleave(per_digit, start, count):
    images, labels = [], []
    for i in range(start, start + count):
        for digit, imgs in enumerate(per_digit):
            images.append(imgs[i])
            labels.append(digit)
    return images, labels


def write_gz(path, payload):
    with open(path, "wb") as f, gzip.GzipFile(fileobj=f, mode="wb", mtime=0, filename="") as gz:
        gz.write(payload)


def write_split(out, name, images, labels):
    head = struct.pack(">IIII", 0x803, len(images), SIDE, SIDE)
    write_gz(out / f"{name}-images-idx3-ubyte.gz", head + b"".join(images))
    write_gz(out / f"{name}-labels-idx1-ubyte.gz", struct.pack(">II", 0x801, len(labels)) + bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    per_digit = [load_digit(src / f"{d}.json") for d in range(10)]
    write_split(out, "train", *interleave(per_digit, 0, TRAIN_PER_DIGIT))
    write_split(out, "t10k", *interleave(per_digit, TRAIN_PER_DIGIT, TEST_PER_DIGIT))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Build IDX-format MNIST files from the `mnist` npm package.

The npm package ships 10,000 real MNIST images as per-digit JSON arrays of
784 floats in [0,1]. This script deterministically shuffles them, splits
into train/test, and writes gzipped IDX files (magic 0x803 for images,
0x801 for labels) compatible with the standard distribution format.

Usage: prepare_mnist.py <digits_dir> <out_dir> [--train 9000] [--test 1000]

To fetch the source data:  npm pack mnist && tar xzf mnist-*.tgz
(digits_dir is then package/src/digits).
"""

import argparse
import gzip
import json
import os
import random
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=9000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]  # n*784 floats in [0,1]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            samples.append((digit, flat[i : i + 784]))
    print(f"loaded {len(samples)} images")
    assert len(samples) >= args.train + args.test

    random.Random(args.seed).shuffle(samples)
    os.makedirs(args.out_dir, exist_ok=True)

    splits = [("train", samples[: args.train]),
              ("test", samples[args.train : args.train + args.test])]
    for name, part in splits:
        img_path = os.path.join(args.out_dir, f"{name}-images-idx3-ubyte.gz")
        lab_path = os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte.gz")
        with gzip.open(img_path, "wb") as f:
            f.write(struct.pack(">IIII", 0x803, len(part), 28, 28))
            for _, img in part:
                f.write(bytes(min(255, max(0, round(v * 255))) for v in img))
        with gzip.open(lab_path, "wb") as f:
            f.write(struct.pack(">II", 0x801, len(part)))
            f.write(bytes(d for d, _ in part))
        print(f"{name}: {len(part)} -> {img_path}")


if __name__ == "__main__":
    main()

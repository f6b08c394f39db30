#!/usr/bin/env python3
"""Build a desk-scale MNIST subset in IDX format.

The official MNIST mirrors are not always reachable. The `mnist` npm package
(https://www.npmjs.com/package/mnist) ships 10000 real MNIST digits as
per-class JSON arrays of intensities already divided by 255. This script
shuffles them with a fixed seed and writes disjoint train/test splits as
standard IDX files:

    train-images-idx3-ubyte / train-labels-idx1-ubyte   (--train samples)
    t10k-images-idx3-ubyte  / t10k-labels-idx1-ubyte    (--test samples)

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/prepare_mnist.py package/src/digits data/mnist
"""
import argparse
import json
import os
import random
import struct


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20150101)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            data = json.load(f)["data"]
        for i in range(len(data) // 784):
            px = [int(round(v * 255.0)) for v in data[i * 784:(i + 1) * 784]]
            samples.append((px, digit))

    random.Random(args.seed).shuffle(samples)
    if args.train + args.test > len(samples):
        raise SystemExit(f"only {len(samples)} samples available")
    train = samples[: args.train]
    test = samples[args.train : args.train + args.test]

    os.makedirs(args.out_dir, exist_ok=True)
    for name, split in (("train", train), ("t10k", test)):
        write_images(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte"), [s[0] for s in split])
        write_labels(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte"), [s[1] for s in split])
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out_dir}")


if __name__ == "__main__":
    main()

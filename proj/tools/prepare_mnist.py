#!/usr/bin/env python3
"""Convert the 10k-digit MNIST subset shipped in the npm `mnist` package to IDX files.

Usage:
    npm pack mnist            # produces mnist-1.1.0.tgz
    python3 tools/prepare_mnist.py mnist-1.1.0.tgz data/mnist10k

Writes train (8000) and test (2000) splits. Pixels are stored as uint8
round(v * 255); the order is a fixed shuffle so repeated runs are byte-identical.
"""
import argparse
import json
import random
import struct
import tarfile
from pathlib import Path

SIDE = 28
N_TRAIN = 8000


def load_digits(tgz):
    samples = []
    with tarfile.open(tgz) as tar:
        for label in range(10):
            member = tar.extractfile(f"package/src/digits/{label}.json")
            data = json.load(member)["data"]
            count = len(data) // (SIDE * SIDE)
            for i in range(count):
                pix = data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
                samples.append((label, bytes(min(255, max(0, round(v * 255))) for v in pix)))
    return samples


def write_idx(out_dir, prefix, samples):
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, pix in samples:
            f.write(pix)
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("tgz")
    ap.add_argument("out_dir")
    args = ap.parse_args()
    samples = load_digits(args.tgz)
    random.Random(20220101).shuffle(samples)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "train", samples[:N_TRAIN])
    write_idx(out, "test", samples[N_TRAIN:])
    print(f"wrote {N_TRAIN} train / {len(samples) - N_TRAIN} test samples to {out}")


if __name__ == "__main__":
    main()

"""Build the desk-scale MNIST subset as gzip IDX files.

Reads the original IDX files (as shipped, for instance, by the ``mnist-data``
npm package), keeps a seeded random subset of the training images and the
full test set for validation.

    python scripts/prepare_mnist_subset.py SOURCE_DIR OUT_DIR [--train-size 10000]
"""
import argparse
from pathlib import Path

import numpy as np

from lbbnn.data import read_idx_raw, write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--train-size", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    tx = read_idx_raw(args.source / "train-images-idx3-ubyte")
    ty = read_idx_raw(args.source / "train-labels-idx1-ubyte")
    vx = read_idx_raw(args.source / "t10k-images-idx3-ubyte")
    vy = read_idx_raw(args.source / "t10k-labels-idx1-ubyte")
    order = np.sort(np.random.default_rng(args.seed).permutation(len(tx))[: args.train_size])
    write_idx(args.out / "train-images-idx3-ubyte.gz", tx[order])
    write_idx(args.out / "train-labels-idx1-ubyte.gz", ty[order])
    write_idx(args.out / "val-images-idx3-ubyte.gz", vx)
    write_idx(args.out / "val-labels-idx1-ubyte.gz", vy)
    print(f"wrote {len(order)} training and {len(vx)} validation images to {args.out}")
    print("class counts:", np.bincount(ty[order], minlength=10).tolist())


if __name__ == "__main__":
    main()

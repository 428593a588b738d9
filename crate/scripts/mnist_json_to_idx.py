#!/usr/bin/env python3
"""Convert the per-digit JSON files of the npm `mnist` package to IDX files.

Usage: mnist_json_to_idx.py DIGITS_DIR OUT_DIR [--train 5000] [--test 1000] [--seed 0]

Writes train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte
and t10k-labels-idx1-ubyte. Pixels in the JSON are floats rounded to three
decimals; they are mapped back to bytes with round(v * 255).
"""
import argparse
import json
import struct
from pathlib import Path

import numpy as np


def write_idx(prefix: Path, images: np.ndarray, labels: np.ndarray) -> None:
    n = len(labels)
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        raw = np.asarray(json.loads((args.digits_dir / f"{d}.json").read_text())["data"], dtype=np.float64)
        imgs = np.clip(np.rint(raw.reshape(-1, 784) * 255.0), 0, 255)
        images.append(imgs)
        labels.append(np.full(len(imgs), d))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    if args.train + args.test > len(order):
        raise SystemExit(f"only {len(order)} digits available")
    tr, te = order[: args.train], order[args.train : args.train + args.test]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "train", images[tr], labels[tr])
    write_idx(args.out_dir / "t10k", images[te], labels[te])
    print(f"wrote {len(tr)} train / {len(te)} test digits to {args.out_dir}")


if __name__ == "__main__":
    main()

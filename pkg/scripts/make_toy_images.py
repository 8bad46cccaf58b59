#!/usr/bin/env python3
"""Generate a toy binarized-image corpus (8x8 axis-aligned rectangles)."""

import argparse

import numpy as np

from araelab.data import save_binary_images
from araelab.rng import SeededRng


def toy_rectangles(n, side, rng):
    images = np.zeros((n, side * side), dtype=np.uint8)
    for i in range(n):
        r0 = int(rng.randbelow(side - 2))
        c0 = int(rng.randbelow(side - 2))
        h = 2 + int(rng.randbelow(side - r0 - 1))
        w = 2 + int(rng.randbelow(side - c0 - 1))
        img = np.zeros((side, side), dtype=np.uint8)
        img[r0:r0 + h, c0:c0 + w] = 1
        images[i] = img.reshape(-1)
    return images


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--side", type=int, default=8)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="data/toy_images.bimg")
    args = ap.parse_args()
    rng = SeededRng(args.seed)
    save_binary_images(args.out, toy_rectangles(args.n, args.side, rng))
    print(f"wrote {args.n} {args.side}x{args.side} images to {args.out}")


if __name__ == "__main__":
    main()

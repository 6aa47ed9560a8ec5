#!/usr/bin/env python3
"""Build the 28x28 digit IDX files used by the digit-classification runs.

Source images are scikit-learn's bundled 8x8 handwritten digits (the UCI
optical recognition set, 1797 images). Each image is upscaled to 28x28 and
the train split is augmented with small integer shifts to reach the target
counts. The test split comes from held-out source images only.

Usage: make_digits.py [out_dir] (default data/digits)
"""
import struct
import sys

import numpy as np
from sklearn.datasets import load_digits

TRAIN_N = 2000
TEST_N = 500
SIZE = 28


def upscale(img8):
    """8x8 [0..16] -> 28x28 [0..255] by bilinear interpolation."""
    src = img8.astype(np.float64) * (255.0 / 16.0)
    xs = (np.arange(SIZE) + 0.5) * 8.0 / SIZE - 0.5
    xs = np.clip(xs, 0, 7)
    i0 = np.floor(xs).astype(int)
    i1 = np.minimum(i0 + 1, 7)
    f = xs - i0
    rows = src[i0, :] * (1 - f)[:, None] + src[i1, :] * f[:, None]
    out = rows[:, i0] * (1 - f)[None, :] + rows[:, i1] * f[None, :]
    # Suppress the faint interpolation halo so the non-zero support tracks
    # the actual stroke, as it does in native high-resolution scans.
    out[out < 100.0] = 0.0
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def shift(img, dr, dc):
    out = np.zeros_like(img)
    r0, r1 = max(0, dr), SIZE + min(0, dr)
    c0, c1 = max(0, dc), SIZE + min(0, dc)
    out[r0:r1, c0:c1] = img[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
    return out


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIZE, SIZE))
        f.write(np.stack(images).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def build_split(images, labels, target, rng):
    out_imgs, out_labels = [], []
    for img, lab in zip(images, labels):
        out_imgs.append(upscale(img))
        out_labels.append(lab)
    idx = 0
    order = rng.permutation(len(images))
    while len(out_imgs) < target:
        src = order[idx % len(order)]
        idx += 1
        dr, dc = rng.integers(-2, 3, size=2)
        out_imgs.append(shift(upscale(images[src]), int(dr), int(dc)))
        out_labels.append(labels[src])
    return out_imgs[:target], out_labels[:target]


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/digits"
    import os
    os.makedirs(out_dir, exist_ok=True)
    ds = load_digits()
    images = ds.images  # 1797 x 8 x 8
    labels = ds.target

    rng = np.random.default_rng(7)
    perm = rng.permutation(len(images))
    n_test_src = 360
    test_src, train_src = perm[:n_test_src], perm[n_test_src:]

    train_imgs, train_labels = build_split(images[train_src], labels[train_src], TRAIN_N, rng)
    test_imgs, test_labels = build_split(images[test_src], labels[test_src], TEST_N, rng)

    write_idx_images(f"{out_dir}/train-images.idx", train_imgs)
    write_idx_labels(f"{out_dir}/train-labels.idx", train_labels)
    write_idx_images(f"{out_dir}/test-images.idx", test_imgs)
    write_idx_labels(f"{out_dir}/test-labels.idx", test_labels)
    print(f"wrote {len(train_imgs)} train / {len(test_imgs)} test images to {out_dir}")


if __name__ == "__main__":
    main()

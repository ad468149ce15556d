#!/usr/bin/env python3
"""Build the MNIST '0' vs '8' IDX fixture from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist) ships ~1000 samples per
digit as JSON arrays of pixel intensities already divided by 255 and rounded
to three decimals. This script restores the byte values, splits each class
into a pool (train/validation draws) and a fixed test part, and writes
standard big-endian IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/make_mnist08_fixture.py package/src/digits data/mnist08
"""
import json
import struct
import sys
from pathlib import Path

POOL_PER_CLASS = 450
DIGITS = (0, 8)


def load_digit(digits_dir: Path, digit: int) -> list[bytes]:
    raw = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
    count = len(raw) // 784
    images = []
    for k in range(count):
        px = raw[k * 784:(k + 1) * 784]
        images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
    return images


def write_images(path: Path, images: list[bytes]) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)


def write_labels(path: Path, labels: list[int]) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main() -> None:
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    pool_x, pool_y, test_x, test_y = [], [], [], []
    for d in DIGITS:
        imgs = load_digit(digits_dir, d)
        pool_x += imgs[:POOL_PER_CLASS]
        pool_y += [d] * len(imgs[:POOL_PER_CLASS])
        test_x += imgs[POOL_PER_CLASS:]
        test_y += [d] * len(imgs[POOL_PER_CLASS:])
    write_images(out_dir / "pool-images-idx3-ubyte", pool_x)
    write_labels(out_dir / "pool-labels-idx1-ubyte", pool_y)
    write_images(out_dir / "test-images-idx3-ubyte", test_x)
    write_labels(out_dir / "test-labels-idx1-ubyte", test_y)
    print(f"pool={len(pool_x)} test={len(test_x)}")


if __name__ == "__main__":
    main()

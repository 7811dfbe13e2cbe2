#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into a
gzipped IDX image/label pair.

The npm package stores 1000 MNIST digits per class as floats in [0, 1]
rounded to three decimals; round(v * 255) recovers the original bytes
exactly. Images are written round-robin across digits so the label file
interleaves classes the way the real distribution files do.

usage: mnist_npm_to_idx.py <package/src/digits> <out_dir>
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    per_digit = []
    for d in range(10):
        flat = json.loads((src / f"{d}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        imgs = []
        for k in range(len(flat) // 784):
            px = [int(round(v * 255)) for v in flat[k * 784:(k + 1) * 784]]
            assert all(0 <= p <= 255 for p in px)
            imgs.append(bytes(px))
        per_digit.append(imgs)
    images, labels = bytearray(), bytearray()
    for k in range(max(len(x) for x in per_digit)):
        for d in range(10):
            if k < len(per_digit[d]):
                images += per_digit[d][k]
                labels.append(d)
    n = len(labels)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28) + bytes(images))
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package (10,000 real MNIST
samples stored as JSON, pixels already divided by 255 and rounded to three
decimals) into a pair of IDX files.

Usage: mnist_from_npm.py <package/src/digits dir> <out dir>
"""
import json
import struct
import sys
from pathlib import Path


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    images, labels = bytearray(), bytearray()
    count = 0
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for k in range(len(flat) // 784):
            px = flat[k * 784:(k + 1) * 784]
            images.extend(min(255, max(0, round(v * 255))) for v in px)
            labels.append(digit)
            count += 1
    (out / "images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, count, 28, 28) + images)
    (out / "labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, count) + labels)
    print(f"wrote {count} samples to {out}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Write an MNIST subset as IDX files.

The 5000-sample MNIST excerpt bundled in the mlxtend wheel (BSD-3) is the
only copy reachable from an offline build box, so the desk-scale MNIST runs
use the first N samples of it, re-encoded in the original IDX layout.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/extract_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist 2000
"""
import gzip
import random
import struct
import sys
import zipfile
from pathlib import Path


def main() -> None:
    wheel, out_dir, count = sys.argv[1], Path(sys.argv[2]), int(sys.argv[3])
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    # The excerpt is sorted by digit; keep count/10 per digit, then shuffle
    # with a fixed seed so any prefix is class-balanced in expectation.
    per_digit = count // 10
    by_digit = {d: [r for r in rows if int(float(r[784])) == d][:per_digit] for d in range(10)}
    rows = [r for d in range(10) for r in by_digit[d]]
    random.Random(20190903).shuffle(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(int(float(v)) for v in r[:784]))
    with open(out_dir / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(int(float(r[784])) for r in rows))


if __name__ == "__main__":
    main()

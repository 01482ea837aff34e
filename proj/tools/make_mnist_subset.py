#!/usr/bin/env python3
"""Writes a stratified MNIST subset as IDX files under data/mnist/.

Source: the 5000-sample MNIST CSV shipped inside the mlxtend wheel
(label in the last column, 500 images per digit). The wheel is fetched
with pip unless --wheel points at a local copy.
"""
import argparse
import gzip
import pathlib
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                    "-d", dest, "mlxtend==0.24.0"], check=True)
    return next(pathlib.Path(dest).glob("mlxtend-*.whl"))


def write_idx(prefix, images, labels):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", help="local mlxtend wheel")
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist"))
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        text = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()

    by_class = {}
    for line in text.splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        by_class.setdefault(vals[-1], []).append(vals[:-1])

    rng = random.Random(args.seed)
    train, test = [], []
    for label in sorted(by_class):
        rows = by_class[label]
        rng.shuffle(rows)
        test += [(r, label) for r in rows[:args.test_per_class]]
        train += [(r, label) for r in rows[args.test_per_class:]]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("test", test)):
        write_idx(str(out / name), [r for r, _ in part], [l for _, l in part])
        print(f"{name}: {len(part)} images")


if __name__ == "__main__":
    main()

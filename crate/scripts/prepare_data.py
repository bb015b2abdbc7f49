#!/usr/bin/env python3
"""Lay out MNIST and FashionMNIST as IDX files under one data root.

    <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
    <root>/fashion-mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte

Sources are the `mnist-data` (raw IDX) and `fashion-mnist` (per-class JSON)
npm packages. They are fetched with `npm pack` unless extracted copies are
given. The FashionMNIST package has no split: the first 6000 images of each
class go to train, the rest to test, and each split is shuffled with a fixed
seed.
"""

import argparse
import json
import random
import shutil
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

TRAIN_PER_CLASS = 6000
SPLIT_SEED = 20190705
IDX_FILES = [f"{p}-{k}-ubyte" for p in ("train", "t10k") for k in ("images-idx3", "labels-idx1")]


def npm_fetch(spec: str, workdir: Path) -> Path:
    out = subprocess.run(["npm", "pack", spec], cwd=workdir, check=True, capture_output=True, text=True)
    tgz = workdir / out.stdout.strip().splitlines()[-1]
    dest = workdir / spec.split("@")[0]
    with tarfile.open(tgz) as t:
        t.extractall(dest, filter="data")
    return dest / "package"


def write_images(path: Path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path: Path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def prepare_mnist(src: Path, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for name in IDX_FILES:
        shutil.copyfile(src / name, out / name)


def prepare_fashion(src: Path, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": [], "t10k": []}
    for label in range(10):
        rows = json.loads((src / f"{label}.json").read_text())["data"]
        # The package pads class 0 with two empty rows.
        rows = [r for r in rows if r]
        for i, row in enumerate(rows):
            if len(row) != 784 or not all(0 <= v <= 255 for v in row):
                raise ValueError(f"class {label} image {i} is malformed")
            splits["train" if i < TRAIN_PER_CLASS else "t10k"].append((row, label))
    rng = random.Random(SPLIT_SEED)
    for prefix, items in splits.items():
        rng.shuffle(items)
        write_images(out / f"{prefix}-images-idx3-ubyte", [r for r, _ in items])
        write_labels(out / f"{prefix}-labels-idx1-ubyte", [l for _, l in items])
        print(f"fashion-mnist {prefix}: {len(items)} images")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, type=Path, help="data root to create")
    ap.add_argument("--mnist-src", type=Path, help="directory holding the four MNIST IDX files")
    ap.add_argument("--fashion-src", type=Path, help="directory holding 0.json … 9.json")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        mnist_src = args.mnist_src or npm_fetch("mnist-data@1.2.6", tmp) / "data"
        fashion_src = args.fashion_src or npm_fetch("fashion-mnist@1.1.0", tmp) / "src" / "clothes"
        prepare_mnist(mnist_src, args.out / "mnist")
        prepare_fashion(fashion_src, args.out / "fashion-mnist")


if __name__ == "__main__":
    main()

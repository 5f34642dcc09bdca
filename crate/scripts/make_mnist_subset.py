#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the sample bundled with mlxtend.

The sandboxed build environment has no route to the canonical MNIST mirrors,
but PyPI is reachable and the mlxtend wheel ships 5,000 genuine MNIST training
images (500 per class). This script downloads that wheel, splits it 400/100 per
class into train/validation, interleaves the classes with a fixed seed, and
writes gzip-compressed IDX files.

With the full dataset available, point --data-dir at the directory holding the
four standard files instead; the loader accepts both raw and gzipped IDX.
"""

import argparse
import gzip
import io
import random
import struct
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_rows(wheel_dir: Path):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(wheel_dir), "mlxtend==0.24.0"],
        check=True,
    )
    wheel = next(wheel_dir.glob("mlxtend-*.whl"))
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read(MEMBER)).decode()
    rows = []
    for line in text.splitlines():
        fields = line.split(",")
        pixels = bytes(int(float(v)) for v in fields[:-1])
        rows.append((pixels, int(float(fields[-1]))))
    return rows


def write_idx(path: Path, images, labels):
    img = io.BytesIO()
    img.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
    for p in images:
        img.write(p)
    lab = io.BytesIO()
    lab.write(struct.pack(">II", 0x00000801, len(labels)))
    lab.write(bytes(labels))
    # mtime=0 keeps the gzip output reproducible
    with open(f"{path}-images-idx3-ubyte.gz", "wb") as f:
        f.write(gzip.compress(img.getvalue(), mtime=0))
    with open(f"{path}-labels-idx1-ubyte.gz", "wb") as f:
        f.write(gzip.compress(lab.getvalue(), mtime=0))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist-desk")
    ap.add_argument("--train-per-class", type=int, default=400)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        rows = fetch_rows(Path(tmp))

    by_class = {}
    for pixels, label in rows:
        by_class.setdefault(label, []).append(pixels)
    train, val = [], []
    for label in sorted(by_class):
        imgs = by_class[label]
        train += [(p, label) for p in imgs[: args.train_per_class]]
        val += [(p, label) for p in imgs[args.train_per_class :]]
    rng = random.Random(20210101)
    rng.shuffle(train)
    rng.shuffle(val)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train", [p for p, _ in train], [l for _, l in train])
    write_idx(out / "t10k", [p for p, _ in val], [l for _, l in val])
    print(f"wrote {len(train)} train / {len(val)} validation images to {out}")


if __name__ == "__main__":
    main()

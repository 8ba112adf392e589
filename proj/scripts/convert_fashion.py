"""Per-class Fashion-MNIST JSON (as shipped by the fashion-mnist npm package) to IDX.

Each class file holds about 7000 images of 784 bytes; truncated records are dropped. The first 6000 of every
class go to the train split and the rest to t10k; samples are interleaved
class by class so a prefix of either split is roughly balanced.
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 6000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def interleave(per_class):
    images, labels = [], []
    for i in range(max(len(x) for x in per_class)):
        for c, block in enumerate(per_class):
            if i < len(block):
                images.append(block[i])
                labels.append(c)
    return np.array(images), np.array(labels)


def main(src, dest):
    src, dest = Path(src), Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for c in range(10):
        rows = json.loads((src / f"{c}.json").read_text())["data"]
        # A few records in the package are truncated; drop them.
        good = [r for r in rows if len(r) == 784]
        if len(good) != len(rows):
            print(f"class {c}: dropped {len(rows) - len(good)} malformed records", file=sys.stderr)
        data = np.array(good, dtype=np.int64)
        if data.min() < 0 or data.max() > 255:
            raise SystemExit(f"class {c}: pixel values outside 0..255")
        train.append(data[:TRAIN_PER_CLASS])
        test.append(data[TRAIN_PER_CLASS:])
    for split, blocks in (("train", train), ("t10k", test)):
        images, labels = interleave(blocks)
        write_images(dest / f"{split}-images-idx3-ubyte", images)
        write_labels(dest / f"{split}-labels-idx1-ubyte", labels)
        print(f"{split}: {len(labels)} images")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit("usage: convert_fashion.py <clothes-json-dir> <out-dir>")
    main(sys.argv[1], sys.argv[2])

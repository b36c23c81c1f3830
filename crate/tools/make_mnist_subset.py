#!/usr/bin/env python3
"""Builds the 2000-digit MNIST subset in data/ from the `mnist` npm package.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data

Each digits/<d>.json holds {"data": [...]} with 784 values per image, pixel
bytes divided by 255 and rounded to three decimals; round(x * 255) recovers
the bytes. The subset takes the first 200 images of every class and
interleaves them, so sample i has label i % 10.
"""

import json
import pathlib
import struct
import sys

PER_CLASS = 200
PIXELS = 28 * 28


def load_class(src: pathlib.Path, digit: int) -> list[bytes]:
    values = json.loads((src / f"{digit}.json").read_text())["data"]
    images = []
    for i in range(PER_CLASS):
        chunk = values[i * PIXELS:(i + 1) * PIXELS]
        if len(chunk) != PIXELS:
            raise SystemExit(f"digit {digit}: only {i} images")
        images.append(bytes(round(x * 255) for x in chunk))
    return images


def main() -> None:
    src, out = pathlib.Path(sys.argv[1]), pathlib.Path(sys.argv[2])
    classes = [load_class(src, d) for d in range(10)]
    images, labels = [], []
    for i in range(PER_CLASS):
        for d in range(10):
            images.append(classes[d][i])
            labels.append(d)
    n = len(images)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mnist-2k-images.idx").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + b"".join(images))
    (out / "mnist-2k-labels.idx").write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))


if __name__ == "__main__":
    main()

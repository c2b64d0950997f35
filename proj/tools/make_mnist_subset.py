#!/usr/bin/env python3
"""Build the 10k MNIST subset used by the experiments as IDX files.

Source: the `mnist` npm package (1.1.0), which bundles 10,000 MNIST training
digits as JSON arrays of pixel/255 rounded to three decimals. Fetch it with
`npm pack mnist@1.1.0` and extract the tarball, then point --src at
package/src/digits.
"""

import argparse
import json
import pathlib
import random
import struct


def read_digits(src):
    images, labels = [], []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{digit}.json: length {len(data)} is not a multiple of 784")
        for i in range(0, len(data), 784):
            images.append(bytes(min(255, max(0, round(v * 255))) for v in data[i : i + 784]))
            labels.append(digit)
    return images, labels


def write_idx(out, name, images, labels):
    with open(out / f"{name}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for im in images:
            f.write(im)
    with open(out / f"{name}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--src", type=pathlib.Path, required=True, help="directory with 0.json ... 9.json")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=20240229)
    args = ap.parse_args()

    images, labels = read_digits(args.src)
    order = list(range(len(images)))
    random.Random(args.seed).shuffle(order)
    args.out.mkdir(parents=True, exist_ok=True)
    train, test = order[: args.train], order[args.train :]
    write_idx(args.out, "train", [images[i] for i in train], [labels[i] for i in train])
    write_idx(args.out, "t10k", [images[i] for i in test], [labels[i] for i in test])
    print(f"wrote {len(train)} train and {len(test)} test digits to {args.out}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Convert the digit JSON files of the npm `mnist` package into IDX files.

The package (https://www.npmjs.com/package/mnist, MIT) ships 10,000 MNIST
digits as per-class JSON arrays of pixel intensities rounded to three
decimals. Multiplying by 255 and rounding recovers the original bytes.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_idx.py package/src/digits data/mnist-10k
"""
import json
import pathlib
import struct
import sys


def main(src: str, dst: str) -> None:
    src_dir = pathlib.Path(src)
    out_dir = pathlib.Path(dst)
    out_dir.mkdir(parents=True, exist_ok=True)

    images = bytearray()
    labels = bytearray()
    for digit in range(10):
        values = json.loads((src_dir / f"{digit}.json").read_text())["data"]
        if len(values) % 784:
            raise SystemExit(f"{digit}.json: length {len(values)} is not a multiple of 784")
        for v in values:
            b = round(v * 255)
            if not 0 <= b <= 255:
                raise SystemExit(f"{digit}.json: pixel {v} out of range")
            images.append(b)
        labels.extend([digit] * (len(values) // 784))

    count = len(labels)
    with open(out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        f.write(images)
    with open(out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, count))
        f.write(labels)
    print(f"wrote {count} samples to {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    main(sys.argv[1], sys.argv[2])

"""Convert the digit JSON files shipped in the npm `mnist` package into
gzipped IDX files (the MNIST container format).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_fixture.py package/src/digits crates/core/tests/data

Digits are interleaved class by class so any prefix of the file is close to
class balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def load_digit(path):
    text = path.read_text()
    values = json.loads(text[text.index("["): text.rindex("]") + 1])
    assert len(values) % 784 == 0
    pixels = [round(v * 255) for v in values]
    return [bytes(pixels[i:i + 784]) for i in range(0, len(pixels), 784)]


def main(src, dst):
    src, dst = Path(src), Path(dst)
    per_class = [load_digit(src / f"{d}.json") for d in range(10)]
    n = min(len(c) for c in per_class)
    images, labels = [], []
    for i in range(n):
        for d in range(10):
            images.append(per_class[d][i])
            labels.append(d)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "mnist-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(b"".join(images))
    with gzip.GzipFile(dst / "mnist-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

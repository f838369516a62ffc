"""Write the 5,000-image MNIST subset bundled with mlxtend as gzipped IDX files.

The sandbox has no route to the usual MNIST mirrors, but the ``mlxtend`` wheel
ships ``mnist_5k.csv.gz`` (500 images per digit, 784 pixel columns followed by
the label). This script converts it to the IDX layout so the regular loaders
are exercised end to end.

    pip download --no-deps mlxtend -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist5k
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def main(wheel, out_dir):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",").astype(np.uint8)
    pixels, labels = table[:, :-1], table[:, -1]
    n = len(labels)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images_blob = struct.pack(">IIII", 0x803, n, 28, 28) + pixels.tobytes()
    labels_blob = struct.pack(">II", 0x801, n) + labels.tobytes()
    # mtime=0 keeps the archives byte-stable across regenerations
    for name, blob in [("images-idx3-ubyte.gz", images_blob), ("labels-idx1-ubyte.gz", labels_blob)]:
        with open(out / name, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(blob)
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:3])

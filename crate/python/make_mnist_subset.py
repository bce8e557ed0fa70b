"""Convert the digits bundled with the npm `mnist` package into IDX image files.

The npm package (https://www.npmjs.com/package/mnist) ships 10000 MNIST digits
as JSON arrays of pixel intensities in [0, 1] rounded to three decimals.  This
script recovers the raw bytes, interleaves the ten classes with a fixed seed and
writes a gzipped IDX train/test split:

    data/mnist10k/train-images-idx3-ubyte.gz   (8000 images)
    data/mnist10k/test-images-idx3-ubyte.gz    (2000 images)

Usage: python make_mnist_subset.py <path/to/package/src/digits> <out_dir>
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

SIDE = 28
N_TRAIN = 8000


def load_digits(digits_dir: Path) -> np.ndarray:
    images = []
    for digit in range(10):
        raw = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        arr = np.asarray(raw, dtype=np.float64).reshape(-1, SIDE * SIDE)
        images.append(np.rint(arr * 255.0).clip(0, 255).astype(np.uint8))
    return np.concatenate(images)


def write_idx(path: Path, images: np.ndarray) -> None:
    header = struct.pack(">BBBBIII", 0, 0, 8, 3, images.shape[0], SIDE, SIDE)
    # mtime=0 keeps the archive byte-identical across regenerations
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        fh.write(header)
        fh.write(images.tobytes())


def main() -> None:
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    images = load_digits(digits_dir)
    order = np.random.default_rng(20140101).permutation(images.shape[0])
    images = images[order]
    out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(out_dir / "train-images-idx3-ubyte.gz", images[:N_TRAIN])
    write_idx(out_dir / "test-images-idx3-ubyte.gz", images[N_TRAIN:])
    print(f"wrote {N_TRAIN} train / {images.shape[0] - N_TRAIN} test images to {out_dir}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Download the MNIST IDX files and rebuild the bundled desk-scale subset.

The repository ships data/mnist/{train,test}-*.idx.gz holding the first
5000 training and 1000 test examples; this script recreates them from the
canonical full files (and leaves the full files next to them), for anyone
who wants to train on more data or double-check the subset.

Usage: python3 scripts/fetch_mnist.py [dest_dir]
"""

import gzip
import struct
import sys
import urllib.request
from pathlib import Path

MIRRORS = (
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://raw.githubusercontent.com/fgnt/mnist/master/",
)

FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)

SUBSETS = (
    ("train-images-idx3-ubyte.gz", "train-images-5000.idx.gz", 5000),
    ("train-labels-idx1-ubyte.gz", "train-labels-5000.idx.gz", 5000),
    ("t10k-images-idx3-ubyte.gz", "test-images-1000.idx.gz", 1000),
    ("t10k-labels-idx1-ubyte.gz", "test-labels-1000.idx.gz", 1000),
)


def download(dest: Path, name: str) -> Path:
    path = dest / name
    if path.exists():
        print(f"already have {path}")
        return path
    last_error = None
    for mirror in MIRRORS:
        url = mirror + name
        try:
            print(f"fetching {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                path.write_bytes(resp.read())
            return path
        except OSError as exc:
            last_error = exc
            print(f"  failed: {exc}")
    raise SystemExit(f"could not download {name}: {last_error}")


def take_prefix(src: Path, dst: Path, count: int):
    with gzip.open(src, "rb") as fh:
        raw = fh.read()
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    dims = list(struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim]))
    item = 1
    for d in dims[1:]:
        item *= d
    dims[0] = count
    header = struct.pack(">I", magic) + struct.pack(f">{ndim}I", *dims)
    body = raw[4 + 4 * ndim:4 + 4 * ndim + count * item]
    if len(body) != count * item:
        raise SystemExit(f"{src} holds fewer than {count} items")
    with gzip.open(dst, "wb", compresslevel=9) as fh:
        fh.write(header + body)
    print(f"wrote {dst} ({count} items)")


def main():
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/mnist")
    dest.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        download(dest, name)
    for src_name, dst_name, count in SUBSETS:
        take_prefix(dest / src_name, dest / dst_name, count)


if __name__ == "__main__":
    main()

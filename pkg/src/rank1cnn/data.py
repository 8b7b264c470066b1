"""Dataset ingestion, synthetic data, batching and checkpoint files."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass

import numpy as np

from .network import Network, NetworkSpec, build_network

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """The file is not a well-formed IDX image or label file."""


class CheckpointError(ValueError):
    """The checkpoint file is missing, truncated or from another format version."""


@dataclass
class Dataset:
    """Images [count, channels, height, width] in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be 4-D, got shape {self.images.shape}")
        if len(self.images) == 0:
            raise ValueError("dataset must hold at least one example")
        if self.labels.shape != (len(self.images),):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {len(self.images)} images"
            )
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if not np.isfinite(self.images).all():
            raise ValueError("images contain non-finite values")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.images)


def _read_file(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _parse_idx(path, expected_magic: int, rank: int, what: str) -> np.ndarray:
    raw = _read_file(path)
    header = 4 + 4 * rank
    if len(raw) < header:
        raise IdxFormatError(f"{what} file {path} truncated before header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"{what} file {path} has magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{rank}I", raw[4:header])
    count = 1
    for d in dims:
        count *= d
    if len(raw) != header + count:
        raise IdxFormatError(
            f"{what} file {path} holds {len(raw) - header} data bytes, expected {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Load an IDX image/label pair (plain or gzip) as a normalized dataset.

    Images use magic 0x00000803 with [count, height, width] byte pixels,
    labels magic 0x00000801; pixels are scaled by 1/255 and a channel axis
    of 1 is added.  class_count defaults to max(labels) + 1.
    """
    images = _parse_idx(images_path, IMAGES_MAGIC, 3, "images")
    labels = _parse_idx(labels_path, LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    if images.shape[0] == 0:
        raise IdxFormatError("IDX pair holds no examples")
    if class_count is None:
        class_count = int(labels.max()) + 1
    return Dataset(
        images=images[:, None, :, :].astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        class_count=class_count,
    )


def synth_blobs(classes: int, per_class: int, dims=(1, 8, 8), seed: int = 0,
                noise: float = 0.08, template_seed: int = 0) -> Dataset:
    """Linearly separable synthetic images: one random template per class
    plus small Gaussian noise, clipped to [0, 1], in shuffled order.

    The class templates depend only on template_seed, so datasets drawn
    with different ``seed`` values (train/test splits) share their classes.
    """
    if classes < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 example per class")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be [channels, height, width], got {dims}")
    templates = np.random.default_rng(template_seed).uniform(0.15, 0.85, (classes, *dims))
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    images = np.clip(
        templates[labels] + noise * rng.standard_normal((labels.size, *dims)), 0.0, 1.0
    )
    order = rng.permutation(labels.size)
    return Dataset(images[order], labels[order], classes)


def batches(data: Dataset, batch_size: int, shuffle_seed: int | None = None):
    """Yield (images, labels) minibatches covering the dataset once.

    The trailing short batch is included.  shuffle_seed None keeps dataset
    order; an integer shuffles deterministically with that seed.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    count = len(data)
    if shuffle_seed is None:
        order = np.arange(count)
    else:
        order = np.random.default_rng(shuffle_seed).permutation(count)
    for start in range(0, count, batch_size):
        idx = order[start:start + batch_size]
        yield data.images[idx], data.labels[idx]


# Checkpoint format: one ASCII header line, then length-prefixed named
# records.  Arrays are little-endian float64 with explicit dims, so a
# save/load round trip is bit-exact.

CHECKPOINT_HEADER = b"RANK1CKPT 1\n"


def _encode_array(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return b"A" + head + a.tobytes()


def _decode_array(payload: bytes) -> np.ndarray:
    ndim = struct.unpack("<I", payload[:4])[0]
    dims = struct.unpack(f"<{ndim}I", payload[4:4 + 4 * ndim])
    data = np.frombuffer(payload, dtype="<f8", offset=4 + 4 * ndim)
    return data.reshape(dims).astype(np.float64)


def save_checkpoint(path, network: Network, seed: int | None = None):
    """Serialize a network (architecture, mode and all parameters) to one file."""
    states = network.state()
    if not network.layers or not any(states):
        raise CheckpointError("refusing to save a network with no parameters")
    meta = {
        "mode": network.mode,
        "seed": seed,
        "spec": network.spec.to_dict(),
    }
    records = [("meta", b"J" + json.dumps(meta, sort_keys=True).encode())]
    for i, state in enumerate(states):
        for name in sorted(state):
            records.append((f"layer{i}.{name}", _encode_array(state[name])))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_HEADER)
        for name, payload in records:
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def _read_records(raw: bytes):
    if not raw.startswith(CHECKPOINT_HEADER):
        head = raw.split(b"\n", 1)[0][:40]
        raise CheckpointError(
            f"unsupported checkpoint header {head!r}, expected {CHECKPOINT_HEADER.strip()!r}"
        )
    pos = len(CHECKPOINT_HEADER)
    records = {}
    while pos < len(raw):
        try:
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + name_len].decode()
            if len(name.encode()) != name_len:
                raise CheckpointError(f"checkpoint truncated inside record name at byte {pos}")
            pos += name_len
            (size,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            payload = raw[pos:pos + size]
            if len(payload) != size:
                raise CheckpointError(f"checkpoint truncated inside record {name!r}")
            pos += size
        except struct.error as exc:
            raise CheckpointError(f"checkpoint truncated at byte {pos}") from exc
        if name in records:
            raise CheckpointError(f"duplicate checkpoint record {name!r}")
        records[name] = payload
    return records


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild a network from :func:`save_checkpoint` output.

    Returns the network and the metadata dict (mode, seed, architecture).
    Evaluating the restored network reproduces the saved one bit for bit.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    records = _read_records(raw)
    if "meta" not in records or not records["meta"].startswith(b"J"):
        raise CheckpointError("checkpoint is missing its metadata record")
    try:
        meta = json.loads(records.pop("meta")[1:])
        spec = NetworkSpec.from_dict(meta["spec"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint metadata: {exc}") from exc
    network = build_network(spec, meta["mode"], np.random.default_rng(0))
    states = [dict() for _ in network.layers]
    for name, payload in records.items():
        prefix, _, param = name.partition(".")
        if not prefix.startswith("layer") or not param or not payload.startswith(b"A"):
            raise CheckpointError(f"unrecognized checkpoint record {name!r}")
        try:
            index = int(prefix[len("layer"):])
        except ValueError as exc:
            raise CheckpointError(f"unrecognized checkpoint record {name!r}") from exc
        if not 0 <= index < len(network.layers):
            raise CheckpointError(f"record {name!r} addresses a missing layer")
        states[index][param] = _decode_array(payload[1:])
    try:
        network.load_state(states)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint does not match its architecture: {exc}") from exc
    return network, meta

"""Datasets (IDX files, synthetic Gaussians) and the binary checkpoint format."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, ParameterError, TruncatedFileError, UnsupportedVersionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CHECKPOINT_MAGIC = b"DBMF"
CHECKPOINT_VERSION = 1
META_SECTION = "__meta__"
DTYPE_FLOAT32 = 0
DTYPE_BYTES = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    examples: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int64
    num_classes: int
    provenance: str = "synthetic"
    scaling: str = "none"

    def __post_init__(self):
        if self.examples.ndim != 2 or self.examples.shape[0] < 1:
            raise DataError("a dataset needs at least one example as an (n, d) array")
        if self.labels.shape != (self.examples.shape[0],):
            raise DataError("need exactly one label per example")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.examples.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.examples[idx], self.labels[idx], self.num_classes, self.provenance, self.scaling)


# --- IDX -------------------------------------------------------------------


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{path}: expected {n} more bytes, got {len(buf)}")
    return buf


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != expected_magic:
            raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, path))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(_read_exact(fh, count, path), dtype=np.uint8)
    return data.reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Read an unsigned-byte IDX image/label pair; pixels are mapped to [-1, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DataError("IDX files contain no examples")
    x = (images.reshape(images.shape[0], -1).astype(np.float64) / 127.5 - 1.0).astype(np.float32)
    y = labels.astype(np.int64)
    n_cls = int(num_classes) if num_classes is not None else int(y.max()) + 1
    return Dataset(x, y, max(n_cls, 2), provenance="idx", scaling="x/127.5-1")


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write ``(n, rows, cols)`` uint8 images and ``(n,)`` uint8 labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ParameterError("images must be (n, rows, cols)")
    atomic_write_bytes(images_path, struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    atomic_write_bytes(labels_path, struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def generate_gaussian_dataset(class_means, sigma: float, n_per_class: int, seed: int) -> Dataset:
    """``n_per_class`` draws from Normal(mean_c, sigma^2 I) per class, grouped by class."""
    means = np.asarray(class_means, dtype=np.float64)
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if means.ndim != 2 or means.shape[0] < 2:
        raise ParameterError("need a (num_classes >= 2, d) array of class means")
    if n_per_class < 1:
        raise ParameterError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    c, d = means.shape
    x = means[:, None, :] + sigma * rng.standard_normal((c, n_per_class, d))
    y = np.repeat(np.arange(c), n_per_class)
    return Dataset(x.reshape(c * n_per_class, d).astype(np.float32), y, c, "synthetic", "none")


# --- atomic writes ---------------------------------------------------------


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --- checkpoints -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Checkpoint:
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def _section(name: str, dtype_code: int, dims: tuple[int, ...], payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF or len(dims) > 0xFF:
        raise ParameterError(f"section {name!r} cannot be encoded")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", dtype_code, len(dims))
    return head + struct.pack(f"<{len(dims)}I", *dims) + payload


def encode_checkpoint(arrays: dict[str, np.ndarray], metadata: dict) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays) + 1)]
    for name, arr in arrays.items():
        if name == META_SECTION:
            raise ParameterError(f"{META_SECTION!r} is reserved")
        a = np.asarray(arr)
        if a.dtype != np.float32:
            raise ParameterError(f"section {name!r}: only float32 tensors are stored, got {a.dtype}")
        parts.append(_section(name, DTYPE_FLOAT32, a.shape, a.astype("<f4").tobytes()))
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts.append(_section(META_SECTION, DTYPE_BYTES, (len(meta),), meta))
    return b"".join(parts)


def save_checkpoint(path, params, metadata: dict | None = None) -> None:
    arrays = params if isinstance(params, dict) else params.arrays()
    atomic_write_bytes(path, encode_checkpoint(arrays, dict(metadata or {})))


def decode_checkpoint(buf: bytes, source="<bytes>") -> Checkpoint:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFileError(f"{source}: truncated at byte {len(buf)} (needed {pos + n})")
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported checkpoint version {version}")
    arrays: dict[str, np.ndarray] = {}
    metadata = None
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        dtype_code, rank = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        if dtype_code == DTYPE_FLOAT32:
            arrays[name] = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
        elif dtype_code == DTYPE_BYTES:
            raw = take(size)
            if name != META_SECTION:
                raise FormatError(f"{source}: byte section {name!r} is not metadata")
            try:
                metadata = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{source}: unreadable metadata ({exc})") from exc
        else:
            raise FormatError(f"{source}: unknown dtype code {dtype_code} in section {name!r}")
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes")
    if metadata is None:
        raise FormatError(f"{source}: missing {META_SECTION} section")
    return Checkpoint(arrays, metadata)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_checkpoint(buf, path)

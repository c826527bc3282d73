"""IDX (MNIST format) reading and writing.

Layout, big-endian::

    [0000] magic: two zero bytes, type byte 0x08 (uint8), rank byte
    [0004] one uint32 per dimension
    [....] raw uint8 payload, row-major

Only rank-3 image tensors (magic 0x00000803) and rank-1 label vectors
(0x00000801) are accepted. Files starting with the gzip signature are
decompressed transparently.
"""

from __future__ import annotations

import gzip
import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from arbench.core.errors import DataUnavailableError, IdxFormatError
from arbench.models.bins import BinSpec
from arbench.models.dataset import Dataset

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
_RANKS = {IMAGE_MAGIC: 3, LABEL_MAGIC: 1}
_GZIP_SIGNATURE = b"\x1f\x8b"
# Largest payload accepted from a header (4 GiB).
MAX_PAYLOAD = 1 << 32


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode IDX bytes into a uint8 array.

    Raises:
        IdxFormatError: On an unknown magic, a truncated header or payload,
            trailing bytes, or dimensions whose product overflows.
    """
    if raw[:2] == _GZIP_SIGNATURE:
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise IdxFormatError(f"file holds {len(raw)} bytes, too short for the magic number", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in _RANKS:
        raise IdxFormatError(
            f"unsupported magic 0x{magic:08x}; expected 0x{IMAGE_MAGIC:08x} (images) "
            f"or 0x{LABEL_MAGIC:08x} (labels)",
            offset=0,
        )
    rank = _RANKS[magic]
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise IdxFormatError(f"truncated header: {rank} dimension sizes expected", offset=len(raw))
    shape = struct.unpack(f">{rank}I", raw[4:header_end])
    expected = 1
    for axis, size in enumerate(shape):
        expected *= size
        if expected > MAX_PAYLOAD:
            raise IdxFormatError(f"dimension sizes {shape} overflow the payload limit", offset=4 + 4 * axis)
    payload = len(raw) - header_end
    if payload < expected:
        raise IdxFormatError(
            f"truncated payload: {expected} bytes declared, {payload} present", offset=len(raw)
        )
    if payload > expected:
        raise IdxFormatError(f"{payload - expected} trailing bytes after payload", offset=header_end + expected)
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(shape).copy()


def read_idx(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataUnavailableError(f"IDX file not found: {path}")
    return parse_idx(path.read_bytes())


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"IDX payload must be uint8, got {array.dtype}")
    magic = {3: IMAGE_MAGIC, 1: LABEL_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError(f"IDX writer handles rank 1 or 3 arrays, got rank {array.ndim}")
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def write_idx(path: str | Path, array: np.ndarray) -> Path:
    """Write a uint8 array as IDX; a ``.gz`` suffix gzips the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_idx(array)
    if path.suffix == ".gz":
        # mtime pinned so identical arrays give identical files
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)
    return path


def load_idx(
    images_path: str | Path,
    labels_path: Optional[str | Path] = None,
    bins: Optional[BinSpec] = None,
    limit: Optional[int] = None,
    name: Optional[str] = None,
) -> Dataset:
    """Load IDX images (and optional labels) as a Dataset of (N, 1, H, W).

    Pixel byte v maps to lo + (hi - lo) * v / 255, which for the default
    256-bin image grid is exactly the centre of bin v.
    """
    bins = bins or BinSpec.image()
    raw = read_idx(images_path)
    if raw.ndim != 3:
        raise IdxFormatError(f"{images_path} holds labels, not images", offset=0)
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise IdxFormatError(f"{labels_path} holds images, not labels", offset=0)
        if len(labels) != len(raw):
            raise IdxFormatError(f"{len(labels)} labels for {len(raw)} images", offset=4)
    if limit is not None:
        raw = raw[:limit]
        labels = None if labels is None else labels[:limit]
    if bins.count == 256:
        examples = bins.from_levels(raw)
    else:
        examples = bins.snap(bins.lo + (bins.hi - bins.lo) * raw / 255.0)
    logger.info(f"Loaded {len(raw)} images of {raw.shape[1]}x{raw.shape[2]} from {images_path}")
    return Dataset(
        name=name or Path(images_path).name.split(".")[0],
        examples=examples[:, None],
        labels=labels,
        bins=bins,
        provenance=f"IDX {images_path}",
    )


def dataset_to_idx(dataset: Dataset, images_path: str | Path, labels_path: Optional[str | Path] = None) -> None:
    """Write single-channel images (and labels) of a Dataset back to IDX."""
    if dataset.examples.ndim != 4 or dataset.examples.shape[1] != 1:
        raise ValueError(f"expected (N, 1, H, W) images, got {dataset.examples.shape}")
    levels = dataset.bins.bin_index(dataset.examples[:, 0])
    if dataset.bins.count > 256:
        raise ValueError(f"{dataset.bins.count} bins do not fit in a byte")
    write_idx(images_path, levels.astype(np.uint8))
    if labels_path is not None:
        if dataset.labels is None:
            raise ValueError(f"{dataset.name} has no labels to write")
        write_idx(labels_path, dataset.labels.astype(np.uint8))

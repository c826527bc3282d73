"""ARDX1 checkpoint files.

Layout: the line ``ARDX1``, a decimal header length line, a JSON manifest of
that many bytes, then the little-endian float64 payload. Array offsets in the
manifest are byte offsets into the payload.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from arbench.core.errors import CheckpointError
from arbench.models.configs import ClassifierConfig, GeneratorConfig, MadeConfig, PixelConfig
from arbench.networks.base import ParametricModule
from arbench.networks.classifier import ConvClassifier
from arbench.networks.generator import ConvGenerator
from arbench.networks.made import MadeModel
from arbench.networks.pixel import PixelARModel

logger = logging.getLogger(__name__)

MAGIC = b"ARDX1\n"
_DTYPE = np.dtype("<f8")

MODULE_KINDS: dict[str, tuple[type[ParametricModule], type[BaseModel]]] = {
    MadeModel.kind: (MadeModel, MadeConfig),
    PixelARModel.kind: (PixelARModel, PixelConfig),
    ConvClassifier.kind: (ConvClassifier, ClassifierConfig),
    ConvGenerator.kind: (ConvGenerator, GeneratorConfig),
}


class ArrayEntry(BaseModel):
    name: str
    shape: list[int]
    offset: int = Field(..., ge=0, description="Byte offset into the payload")


class CheckpointManifest(BaseModel):
    """Human-readable checkpoint header."""
    format: str = "ARDX1"
    module_kind: str
    module_config: dict[str, Any] = Field(default_factory=dict)
    metadata: dict[str, Any] = Field(default_factory=dict)
    arrays: list[ArrayEntry] = Field(default_factory=list)


def save_checkpoint(
    path: str | Path,
    module: ParametricModule,
    extra_arrays: Optional[Mapping[str, np.ndarray]] = None,
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write a module's parameters (plus optional extra arrays) to ``path``.

    Extra arrays are stored under their own names; optimizer moments use
    ``adam.m.<param>`` and ``adam.v.<param>``.
    """
    path = Path(path)
    arrays = dict(module.arrays())
    for name, value in (extra_arrays or {}).items():
        if name in arrays:
            raise CheckpointError(f"extra array {name!r} collides with a parameter")
        arrays[name] = np.asarray(value, dtype=np.float64)

    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype=_DTYPE)
        entries.append(ArrayEntry(name=name, shape=list(data.shape), offset=offset))
        chunks.append(data.tobytes())
        offset += data.nbytes

    manifest = CheckpointManifest(
        module_kind=module.kind,
        module_config=module.config.model_dump(mode="json") if module.config is not None else {},
        metadata=dict(metadata or {}),
        arrays=entries,
    )
    header = manifest.model_dump_json(indent=2).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(header)}\n".encode("ascii"))
        fh.write(header)
        fh.write(b"\n")
        for chunk in chunks:
            fh.write(chunk)
    logger.info(f"Saved {module.kind} checkpoint with {len(entries)} arrays to {path}")
    return path


def load_checkpoint(path: str | Path) -> tuple[CheckpointManifest, dict[str, np.ndarray]]:
    """Read a checkpoint into its manifest and named arrays.

    Raises:
        FileNotFoundError: If the file does not exist.
        CheckpointError: If the file is not a well-formed ARDX1 checkpoint.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: missing ARDX1 magic")
    cursor = len(MAGIC)
    newline = raw.find(b"\n", cursor)
    if newline < 0:
        raise CheckpointError(f"{path}: missing header length line")
    try:
        header_len = int(raw[cursor:newline])
    except ValueError as e:
        raise CheckpointError(f"{path}: bad header length {raw[cursor:newline]!r}") from e
    start = newline + 1
    header = raw[start:start + header_len]
    if len(header) != header_len or raw[start + header_len:start + header_len + 1] != b"\n":
        raise CheckpointError(f"{path}: truncated header")
    try:
        manifest = CheckpointManifest.model_validate(json.loads(header))
    except (json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"{path}: unreadable manifest: {e}") from e

    payload = memoryview(raw)[start + header_len + 1:]
    arrays = {}
    for entry in manifest.arrays:
        count = int(np.prod(entry.shape)) if entry.shape else 1
        end = entry.offset + count * _DTYPE.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: array {entry.name} runs past the payload")
        values = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=entry.offset)
        arrays[entry.name] = values.reshape(entry.shape).astype(np.float64)
    return manifest, arrays


def restore_module(path: str | Path) -> tuple[ParametricModule, CheckpointManifest, dict[str, np.ndarray]]:
    """Rebuild the module a checkpoint was written from.

    Returns:
        The module with loaded parameters, the manifest, and any extra arrays.
    """
    manifest, arrays = load_checkpoint(path)
    if manifest.module_kind not in MODULE_KINDS:
        raise CheckpointError(f"{path}: unknown module kind {manifest.module_kind!r}")
    module_cls, config_cls = MODULE_KINDS[manifest.module_kind]
    module = module_cls(config_cls.model_validate(manifest.module_config))
    names = set(module.arrays())
    missing = names - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    module.set_parameters({name: arrays[name] for name in names})
    extras = {name: value for name, value in arrays.items() if name not in names}
    return module, manifest, extras

"""Binary checkpoint persistence for HrSegNet models.

Layout (all integers u32 little-endian)::

    b"HRSG" | version | config length | config JSON (UTF-8) | tensor count |
    per tensor: name length | name (UTF-8) | ndim | extents... | f32 LE payload

The config JSON is ``{"model": <ModelConfig>, "iteration": <int>}``. Training
state travels as extra tensors named ``optim.velocity.<param>``.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import numpy.typing as npt
from pydantic import ValidationError

from ..core.config import settings
from ..core.errors import ArtifactIOError, FormatError, IntegrityError
from .config import ModelConfig
from .network import HrSegNet, build_model

logger = logging.getLogger(__name__)

MAGIC = b"HRSG"
SUPPORTED_VERSIONS = (1,)
VELOCITY_PREFIX = "optim.velocity."
PAYLOAD_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


@dataclass
class CheckpointPayload:
    """Decoded checkpoint contents before they are bound to a model."""

    config: ModelConfig
    iteration: int
    tensors: Dict[str, np.ndarray]
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def encode_checkpoint(
    model: HrSegNet,
    iteration: int = 0,
    velocities: Optional[Dict[str, np.ndarray]] = None,
) -> bytes:
    """Serialize ``model`` to the binary checkpoint layout."""
    header = json.dumps(
        {"model": model.config.model_dump(mode="json"), "iteration": int(iteration)},
        sort_keys=True,
    ).encode("utf-8")
    tensors = dict(model.state_dict())
    for name, value in (velocities or {}).items():
        tensors[VELOCITY_PREFIX + name] = value

    chunks = [
        MAGIC,
        _u32(settings.checkpoint_version),
        _u32(len(header)),
        header,
        _u32(len(tensors)),
    ]
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        chunks += [_u32(len(encoded)), encoded, _u32(value.ndim)]
        chunks += [_u32(extent) for extent in value.shape]
        chunks.append(np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes())
    return b"".join(chunks)


def save_checkpoint(
    model: HrSegNet,
    path: PathLike,
    iteration: int = 0,
    velocities: Optional[Dict[str, np.ndarray]] = None,
) -> Path:
    """Write ``model`` (and optional optimizer state) to ``path`` atomically."""
    path = Path(path)
    data = encode_checkpoint(model, iteration, velocities)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("checkpoint written to %s (iteration %d, %d bytes)", path, iteration, len(data))
    return path


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise FormatError(f"{self.source}: truncated while reading {what}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> CheckpointPayload:
    reader = _Reader(data, source)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"{source}: not an HrSegNet checkpoint (bad magic)")
    version = reader.u32("version")
    if version not in SUPPORTED_VERSIONS:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    raw = reader.take(reader.u32("config length"), "config")
    try:
        header = json.loads(raw.decode("utf-8"))
        config = ModelConfig.model_validate(header["model"])
        iteration = int(header.get("iteration", 0))
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, ValidationError) as exc:
        raise FormatError(f"{source}: unreadable config record: {exc}") from exc

    tensors: Dict[str, np.ndarray] = {}
    velocities: Dict[str, np.ndarray] = {}
    for index in range(reader.u32("tensor count")):
        try:
            name = reader.take(reader.u32("name length"), "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: tensor {index} has an invalid name") from exc
        extents = tuple(reader.u32(f"{name} extents") for _ in range(reader.u32(f"{name} ndim")))
        count = int(np.prod(extents, dtype=np.int64))
        payload = reader.take(count * PAYLOAD_DTYPE.itemsize, f"{name} payload")
        value = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(extents)
        if name.startswith(VELOCITY_PREFIX):
            velocities[name[len(VELOCITY_PREFIX):]] = value
        else:
            tensors[name] = value
    if reader.pos != len(data):
        raise FormatError(f"{source}: {len(data) - reader.pos} trailing bytes after last tensor")
    return CheckpointPayload(
        config=config, iteration=iteration, tensors=tensors, velocities=velocities
    )


def read_checkpoint(path: PathLike) -> CheckpointPayload:
    """Decode a checkpoint file without binding it to a model."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, str(path))


def bind_state(model: HrSegNet, tensors: Dict[str, np.ndarray]) -> None:
    """Copy stored tensors into ``model``; mismatches name the first offending tensor."""
    expected = model.state_dict()
    for name, target in expected.items():
        if name not in tensors:
            raise IntegrityError(f"tensor '{name}' is missing from the checkpoint")
        if tensors[name].shape != target.shape:
            raise IntegrityError(
                f"tensor '{name}' has extents {tensors[name].shape} in the checkpoint, "
                f"model expects {target.shape}"
            )
    for name in tensors:
        if name not in expected:
            raise IntegrityError(f"tensor '{name}' in the checkpoint has no place in the model")
    for name, target in expected.items():
        target[...] = tensors[name]


def load_checkpoint(
    path: PathLike,
    config: Optional[ModelConfig] = None,
    dtype: npt.DTypeLike = np.float32,
) -> HrSegNet:
    """Rebuild the stored model, or ``config``'s model when one is requested."""
    payload = read_checkpoint(path)
    model = build_model(config or payload.config, seed=0, dtype=dtype)
    bind_state(model, payload.tensors)
    if config is not None and config != payload.config:
        diff = [
            key for key in ModelConfig.model_fields
            if getattr(config, key) != getattr(payload.config, key)
        ]
        raise IntegrityError(
            f"checkpoint config differs from the requested config in: {', '.join(diff)}"
        )
    logger.info("loaded checkpoint %s (iteration %d)", path, payload.iteration)
    return model

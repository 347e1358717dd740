"""PNG codec for images (8-bit RGB) and masks (8-bit grayscale, 0/255)."""

from pathlib import Path
from typing import Type, Union

import cv2
import numpy as np

from ..core.errors import ArtifactIOError, DatasetError, HrSegError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
MASK_VALUES = (0, 255)

PathLike = Union[str, Path]


def is_png(path: PathLike) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(len(PNG_MAGIC)) == PNG_MAGIC
    except OSError:
        return False


def _decode(path: Path, flags: int, error: Type[HrSegError]) -> np.ndarray:
    if not path.is_file():
        raise error(f"{path}: file not found")
    if not is_png(path):
        raise error(f"{path}: not a PNG file")
    data = cv2.imread(str(path), flags)
    if data is None:
        raise error(f"{path}: malformed PNG")
    return data


def _encode(path: Path, data: np.ndarray) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create {path.parent}: {exc}") from exc
    if not cv2.imwrite(str(path), data):
        raise ArtifactIOError(f"{path}: could not write PNG")


def read_image(path: PathLike, error: Type[HrSegError] = DatasetError) -> np.ndarray:
    """Decode an RGB PNG into float32 ``(3, H, W)`` in [0, 1]."""
    bgr = _decode(Path(path), cv2.IMREAD_COLOR, error)
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=np.float32) / 255.0


def write_image(path: PathLike, image: np.ndarray) -> None:
    """Encode a ``(3, H, W)`` image in [0, 1] (or uint8 ``(H, W, 3)`` RGB)."""
    if image.dtype != np.uint8:
        scaled = np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0)
        image = np.clip(scaled, 0, 255).astype(np.uint8)
    _encode(Path(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))


def read_mask(path: PathLike) -> np.ndarray:
    """Decode a 0/255 mask into class ids ``(1, H, W)`` uint8 in {0, 1}."""
    path = Path(path)
    raw = _decode(path, cv2.IMREAD_UNCHANGED, DatasetError)
    if raw.ndim != 2 or raw.dtype != np.uint8:
        raise DatasetError(
            f"{path}: mask must be 8-bit single-channel, got {raw.dtype} {raw.shape}"
        )
    illegal = np.setdiff1d(np.unique(raw), MASK_VALUES)
    if illegal.size:
        raise DatasetError(f"{path}: mask contains values {illegal.tolist()} outside {{0, 255}}")
    return (raw == 255).astype(np.uint8)[None]


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    """Encode class ids (any shape squeezing to ``(H, W)``) as 0/255."""
    ids = np.asarray(mask).reshape(np.asarray(mask).shape[-2:])
    if np.setdiff1d(np.unique(ids), (0, 1)).size:
        raise DatasetError("mask must hold class ids 0 and 1 only")
    _encode(Path(path), (ids.astype(np.uint8) * 255))

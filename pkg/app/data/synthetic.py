"""Synthetic crack images: textured pavement with dark polyline cracks."""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import cv2
import numpy as np

from ..core.errors import ArtifactIOError, DataError
from .png import write_image, write_mask

logger = logging.getLogger(__name__)

MIN_SIZE = 64
MIN_CRACK_FRACTION = 0.001
MAX_CRACK_FRACTION = 0.10
MAX_ATTEMPTS = 100
MANIFEST = "manifest.txt"


def image_name(index: int) -> str:
    return f"image_{index:04d}.png"


def mask_name(index: int) -> str:
    return f"mask_{index:04d}.png"


def value_noise(rng: np.random.Generator, size: int, octaves: int = 4) -> np.ndarray:
    """Smooth noise in [0, 1]: random coarse grids upsampled and summed."""
    total = np.zeros((size, size), dtype=np.float32)
    weight_sum = 0.0
    for octave in range(octaves):
        cells = 4 * 2**octave
        grid = rng.random((cells, cells)).astype(np.float32)
        layer = cv2.resize(grid, (size, size), interpolation=cv2.INTER_CUBIC)
        weight = 0.5**octave
        total += weight * layer
        weight_sum += weight
    total /= weight_sum
    lo, hi = float(total.min()), float(total.max())
    return (total - lo) / (hi - lo) if hi > lo else np.zeros_like(total)


def _crack_path(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random-walk polyline of roughly ``size`` pixels length."""
    segments = int(rng.integers(4, 11))
    step = size * rng.uniform(0.8, 1.6) / segments
    point = rng.uniform(0.1 * size, 0.9 * size, 2)
    heading = rng.uniform(0, 2 * np.pi)
    points = [point.copy()]
    for _ in range(segments):
        heading += rng.normal(0.0, 0.5)
        point = np.clip(point + step * np.array([np.cos(heading), np.sin(heading)]), 0, size - 1)
        points.append(point.copy())
    return np.rint(np.array(points)).astype(np.int32).reshape(-1, 1, 2)


def draw_cracks(rng: np.random.Generator, size: int) -> np.ndarray:
    """Binary (size, size) uint8 mask of 1-3 cracks within the pixel-fraction limits."""
    max_width = min(5, max(1, size // 32))
    for _ in range(MAX_ATTEMPTS):
        mask = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 4))):
            width = int(rng.integers(1, max_width + 1))
            path = _crack_path(rng, size)
            cv2.polylines(mask, [path], False, 1, thickness=width, lineType=cv2.LINE_8)
        fraction = float(mask.mean())
        if MIN_CRACK_FRACTION <= fraction <= MAX_CRACK_FRACTION:
            return mask
    raise DataError(f"could not draw cracks within pixel-fraction limits at size {size}")


def render_sample(seed: int, index: int, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic (image (3,H,W) float32 in [0,1], mask (H,W) uint8) for ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    texture = value_noise(rng, size)
    grain = rng.normal(0.0, 0.03, (size, size)).astype(np.float32)
    gray = rng.uniform(0.5, 0.75) + 0.15 * (texture - 0.5) + grain
    tint = rng.uniform(0.95, 1.05, 3).astype(np.float32)
    mask = draw_cracks(rng, size)
    depth = np.float32(rng.uniform(0.5, 0.8))
    shade = 1.0 - depth * mask.astype(np.float32)
    image = np.clip(gray[None] * tint[:, None, None] * shade[None], 0.0, 1.0)
    return image.astype(np.float32), mask


def gen_synthetic(count: int, size: int, seed: int, out_dir: Union[str, Path]) -> List[Path]:
    """Write ``count`` image/mask pairs plus ``manifest.txt`` to ``out_dir``."""
    if count < 1:
        raise DataError(f"count must be >= 1, got {count}")
    if size < MIN_SIZE:
        raise DataError(f"size must be >= {MIN_SIZE}, got {size}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create {out}: {exc}") from exc

    written: List[Path] = []
    for index in range(count):
        image, mask = render_sample(seed, index, size)
        write_image(out / image_name(index), image)
        write_mask(out / mask_name(index), mask)
        written.append(out / image_name(index))
    try:
        (out / MANIFEST).write_text(f"seed={seed}\ncount={count}\nsize={size}\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write manifest in {out}: {exc}") from exc
    logger.info(
        "generated %d synthetic samples (%dx%d, seed %d) in %s", count, size, size, seed, out
    )
    return written

"""Training augmentation: random scale, crop, flip, photometric distortion, normalization."""

from typing import Any, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.errors import ConfigError
from ..model.config import describe_validation_error
from .dataset import Sample


def _split(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return value


class AugmentParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scale_range: Tuple[float, float] = (0.5, 2.0)
    crop: Tuple[int, int] = (400, 400)
    hflip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    brightness: float = Field(default=0.5, ge=0.0, le=1.0)
    contrast: float = Field(default=0.5, ge=0.0, le=1.0)
    saturation: float = Field(default=0.5, ge=0.0, le=1.0)
    distortion_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    @field_validator("scale_range", "crop", "mean", "std", mode="before")
    @classmethod
    def _parse_lists(cls, value: Any) -> Any:
        return _split(value)

    @model_validator(mode="after")
    def _check_ranges(self) -> "AugmentParams":
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < min <= max")
        if min(self.crop) < 1:
            raise ValueError("crop extents must be >= 1")
        if min(self.std) <= 0:
            raise ValueError("std must be positive")
        return self

    @classmethod
    def identity(cls, crop: Tuple[int, int]) -> "AugmentParams":
        """No randomness: only normalization changes the image."""
        return cls(
            scale_range=(1.0, 1.0), crop=crop, hflip_prob=0.0,
            brightness=0.0, contrast=0.0, saturation=0.0,
        )

    @classmethod
    def from_mapping(cls, values: dict) -> "AugmentParams":
        try:
            return cls.model_validate(values)
        except ValidationError as exc:
            raise ConfigError(describe_validation_error(exc, "data")) from exc


def normalize(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Per-channel ``(x - mean) / std`` on a (..., 3, H, W) image."""
    mean = np.asarray(params.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(params.std, dtype=np.float32).reshape(3, 1, 1)
    return ((image - mean) / std).astype(np.float32)


def denormalize(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    mean = np.asarray(params.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(params.std, dtype=np.float32).reshape(3, 1, 1)
    return (image * std + mean).astype(np.float32)


def _rescale(image: np.ndarray, mask: np.ndarray, scale: float) -> Tuple[np.ndarray, np.ndarray]:
    h, w = mask.shape
    new_w, new_h = max(1, int(round(w * scale))), max(1, int(round(h * scale)))
    if (new_h, new_w) == (h, w):
        return image, mask
    hwc = np.ascontiguousarray(image.transpose(1, 2, 0))
    hwc = cv2.resize(hwc, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    mask = cv2.resize(mask, (new_w, new_h), interpolation=cv2.INTER_NEAREST)
    return np.ascontiguousarray(hwc.transpose(2, 0, 1)), mask


def _crop(
    image: np.ndarray, mask: np.ndarray, crop: Tuple[int, int], rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    ch, cw = crop
    h, w = mask.shape
    pad_h, pad_w = max(0, ch - h), max(0, cw - w)
    if pad_h or pad_w:
        image = np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)))
        mask = np.pad(mask, ((0, pad_h), (0, pad_w)))
        h, w = mask.shape
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return image[:, top:top + ch, left:left + cw], mask[top:top + ch, left:left + cw]


def _distort(image: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    def factor(strength: float) -> float:
        if strength <= 0 or rng.random() >= params.distortion_prob:
            return 1.0
        return float(rng.uniform(1.0 - strength, 1.0 + strength))

    b = factor(params.brightness)
    if b != 1.0:
        image = image * b
    c = factor(params.contrast)
    if c != 1.0:
        image = image.mean() + (image - image.mean()) * c
    s = factor(params.saturation)
    if s != 1.0:
        gray = (0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2])[None]
        image = gray + (image - gray) * s
    return np.clip(image, 0.0, 1.0)


def hflip(sample: Sample) -> Sample:
    """Mirror image and mask left to right."""
    return Sample(
        image=np.ascontiguousarray(sample.image[..., ::-1]),
        mask=np.ascontiguousarray(sample.mask[..., ::-1]),
    )


def augment(sample: Sample, params: AugmentParams, rng: np.random.Generator) -> Sample:
    """Scale, crop, flip and distort ``sample``, then normalize its image.

    The mask is resampled with nearest-neighbour only, so its values stay
    class ids.
    """
    image = sample.image[0].astype(np.float32)
    mask = sample.mask[0, 0].astype(np.uint8)

    lo, hi = params.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else lo
    image, mask = _rescale(image, mask, scale)
    image, mask = _crop(image, mask, params.crop, rng)
    if params.hflip_prob > 0 and rng.random() < params.hflip_prob:
        flipped = hflip(Sample(image=image[None], mask=mask[None, None]))
        image, mask = flipped.image[0], flipped.mask[0, 0]
    image = _distort(image, params, rng)
    return Sample(
        image=np.ascontiguousarray(normalize(image, params)[None]),
        mask=np.ascontiguousarray(mask)[None, None],
    )

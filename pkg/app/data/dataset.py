"""On-disk crack dataset: paired ``image_XXXX.png`` / ``mask_XXXX.png`` files."""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Union

import numpy as np

from ..core.errors import DatasetError, ShapeError
from .png import read_image, read_mask

logger = logging.getLogger(__name__)

PAIR_PATTERN = re.compile(r"^(image|mask)_(\d+)\.png$")


@dataclass
class Sample:
    """One image (1, 3, H, W) float32 in [0, 1] and its mask (1, 1, H, W) of class ids."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.image.ndim != 4 or self.image.shape[:2] != (1, 3):
            raise ShapeError(f"sample image must be (1, 3, H, W), got {self.image.shape}")
        if self.mask.ndim != 4 or self.mask.shape[:2] != (1, 1):
            raise ShapeError(f"sample mask must be (1, 1, H, W), got {self.mask.shape}")
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise ShapeError(f"image {self.image.shape} and mask {self.mask.shape} extents differ")

    @property
    def size(self) -> tuple:
        return tuple(self.image.shape[2:])


class CrackDataset:
    """Indexed, in-memory sample source."""

    def __init__(self, samples: List[Sample], root: Union[Path, None] = None):
        if not samples:
            raise DatasetError(f"{root or 'dataset'}: no samples")
        self.samples = samples
        self.root = root

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        """Sample order for ``epoch``: a pure function of ``(seed, epoch)``."""
        return np.random.default_rng([seed, epoch]).permutation(len(self.samples))


def _scan(root: Path) -> Dict[str, Dict[int, Path]]:
    found: Dict[str, Dict[int, Path]] = {"image": {}, "mask": {}}
    for path in sorted(root.iterdir()):
        match = PAIR_PATTERN.match(path.name)
        if match:
            found[match.group(1)][int(match.group(2))] = path
    return found


def load_dataset(root: Union[str, Path]) -> CrackDataset:
    """Load every image/mask pair under ``root``.

    Unpaired files are reported together, by index, as a ``DatasetError``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    found = _scan(root)
    images, masks = found["image"], found["mask"]
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise DatasetError(f"{root}: unmatched image/mask pairs at indices {unpaired}")
    if not images:
        raise DatasetError(f"{root}: no image_XXXX.png / mask_XXXX.png pairs")

    samples = []
    for index in sorted(images):
        image = read_image(images[index])
        mask = read_mask(masks[index])
        if image.shape[1:] != mask.shape[1:]:
            raise DatasetError(
                f"{root}: pair {index} extents differ: "
                f"image {image.shape[1:]}, mask {mask.shape[1:]}"
            )
        samples.append(Sample(image=image[None], mask=mask[None]))
    logger.info("loaded %d samples from %s", len(samples), root)
    return CrackDataset(samples, root)

"""Crack datasets: synthetic generation, PNG I/O, loading and augmentation."""

from .augment import AugmentParams, augment, normalize
from .dataset import CrackDataset, Sample, load_dataset
from .png import read_image, read_mask, write_image, write_mask
from .synthetic import gen_synthetic

__all__ = [
    "AugmentParams",
    "CrackDataset",
    "Sample",
    "augment",
    "gen_synthetic",
    "load_dataset",
    "normalize",
    "read_image",
    "read_mask",
    "write_image",
    "write_mask",
]

"""Pixel-level segmentation metrics."""

from .confusion import ConfusionMatrix, SegmentationMetrics, compute

__all__ = ["ConfusionMatrix", "SegmentationMetrics", "compute"]

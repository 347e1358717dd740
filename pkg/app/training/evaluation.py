"""Dataset-level evaluation of a model with one global confusion matrix."""

import logging
from typing import Tuple

from ..data.augment import AugmentParams, normalize
from ..data.dataset import CrackDataset
from ..metrics.confusion import ConfusionMatrix, SegmentationMetrics, compute
from ..model.network import HrSegNet

logger = logging.getLogger(__name__)


def evaluate(
    model: HrSegNet, dataset: CrackDataset, params: AugmentParams = AugmentParams()
) -> Tuple[ConfusionMatrix, SegmentationMetrics]:
    """Infer every sample at full size (normalization only) and score it."""
    cm = ConfusionMatrix()
    for sample in dataset:
        image = normalize(sample.image, params).astype(model.dtype)
        cm.update(model.predict(image), sample.mask)
    metrics = compute(cm)
    logger.info("evaluated %d samples: mIoU %.4f", len(dataset), metrics.miou)
    return cm, metrics

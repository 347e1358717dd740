"""Deep-supervision loss: per-head cross-entropy with OHEM and the weighted total."""

from typing import NamedTuple, Optional, Sequence

import numpy as np

from ..core.errors import DataError, ShapeError
from ..nn import functional as F
from ..nn.tensor import Tensor
from .config import OhemConfig


def total_loss(primary_loss: float, aux_losses: Sequence[float], alpha: float) -> float:
    """``primary + alpha * sum(aux)``."""
    return float(primary_loss + alpha * sum(aux_losses))


class OhemSelection(NamedTuple):
    loss: float
    mask: np.ndarray  # bool, same extents as the per-pixel loss


def ohem_reduce(
    per_pixel_loss: np.ndarray,
    true_class_prob: np.ndarray,
    cfg: OhemConfig,
    min_kept: Optional[int] = None,
) -> OhemSelection:
    """Mean loss over hard pixels.

    Hard pixels are those whose true-class probability is below
    ``cfg.prob_thresh``. When fewer than ``min_kept`` (default
    ``cfg.min_kept``) qualify, the ``min_kept`` highest-loss pixels are used
    instead (ties resolved by pixel order).
    """
    loss = np.asarray(per_pixel_loss)
    prob = np.asarray(true_class_prob)
    if loss.shape != prob.shape:
        raise ShapeError(f"ohem: loss {loss.shape} vs probability {prob.shape}")
    if loss.size == 0:
        raise DataError("ohem: empty loss tensor")
    kept = min(cfg.min_kept if min_kept is None else min_kept, loss.size)

    mask = prob < cfg.prob_thresh
    if int(mask.sum()) < kept:
        flat = loss.reshape(-1)
        hardest = np.argsort(-flat, kind="stable")[:kept]
        mask = np.zeros(flat.shape, dtype=bool)
        mask[hardest] = True
        mask = mask.reshape(loss.shape)
    return OhemSelection(loss=float(loss[mask].mean()), mask=mask)


class HeadLoss(NamedTuple):
    loss: float
    grad: Tensor  # d loss / d logits
    kept: int


def head_loss(logits: Tensor, labels: np.ndarray, ohem: Optional[OhemConfig] = None) -> HeadLoss:
    """Cross-entropy of one head, OHEM-reduced when ``ohem`` is enabled."""
    ce = F.softmax_ce_per_pixel(logits, labels)
    n, _, h, w = logits.shape
    if ohem is not None and ohem.enabled:
        ids = labels.astype(np.int64, copy=False)
        p_true = np.take_along_axis(ce.probs, ids, axis=1)
        selection = ohem_reduce(ce.loss, p_true, ohem, ohem.scaled_min_kept(n, h, w))
        count = int(selection.mask.sum())
        weights = selection.mask.astype(logits.dtype) / count
        value = selection.loss
    else:
        count = ce.loss.size
        weights = np.full(ce.loss.shape, 1.0 / count, dtype=logits.dtype)
        value = float(ce.loss.mean())
    grad = F.softmax_ce_backward(ce.probs, labels, weights).astype(logits.dtype, copy=False)
    return HeadLoss(loss=value, grad=grad, kept=count)

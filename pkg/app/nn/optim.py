"""SGD with momentum and L2 weight decay."""

from typing import Tuple

import numpy as np

from ..core.errors import ShapeError


def sgd_momentum_step(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Update ``param`` and ``velocity`` in place and return both.

    g' = grad + weight_decay * param
    velocity = momentum * velocity + g'
    param = param - lr * velocity
    """
    if not (param.shape == grad.shape == velocity.shape):
        raise ShapeError(
            f"sgd step extent mismatch: param {param.shape}, grad {grad.shape}, "
            f"velocity {velocity.shape}"
        )
    g = grad + weight_decay * param if weight_decay else grad
    velocity *= momentum
    velocity += g
    if lr:
        param -= lr * velocity
    return param, velocity

"""Learning-rate schedule: linear warm-up, then poly decay."""

from ..core.errors import ConfigError
from .config import TrainConfig


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based ``iteration``.

    During warm-up the rate ramps linearly to ``base_lr`` (reached at
    ``warmup_iters - 1``); afterwards
    ``base_lr * (1 - iteration / max_iters) ** lr_power``.
    """
    if not 0 <= iteration <= cfg.max_iters:
        raise ConfigError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    if iteration < cfg.warmup_iters:
        return cfg.base_lr * (iteration + 1) / cfg.warmup_iters
    if cfg.max_iters == 0:
        return 0.0
    return cfg.base_lr * (1.0 - iteration / cfg.max_iters) ** cfg.lr_power

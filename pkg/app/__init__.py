"""Main app module for the HrSegNet crack segmentation engine."""

from .complexity import model_complexity
from .core import HrSegError, settings
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, train_loop

__all__ = [
    "HrSegError",
    "ModelConfig",
    "TrainConfig",
    "build_model",
    "load_checkpoint",
    "model_complexity",
    "save_checkpoint",
    "settings",
    "train_loop",
]

"""Training recipe: losses, schedule, loop and evaluation."""

from .config import OhemConfig, TrainConfig
from .evaluation import evaluate
from .losses import HeadLoss, head_loss, ohem_reduce, total_loss
from .schedule import poly_lr
from .trainer import CsvLossSink, LoggingSink, LossRecord, Trainer, TrainResult, train_loop

__all__ = [
    "CsvLossSink",
    "HeadLoss",
    "LoggingSink",
    "LossRecord",
    "OhemConfig",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "evaluate",
    "head_loss",
    "ohem_reduce",
    "poly_lr",
    "total_loss",
    "train_loop",
]

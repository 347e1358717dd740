"""Tensor kernels, layers and optimizer for the HrSegNet engine."""

from .gradcheck import GradCheckReport, grad_check
from .layers import (
    Activation,
    BatchNorm2d,
    Composite,
    Conv2d,
    ConvBNAct,
    ConvTranspose2d,
    Fuse,
    MacCounter,
    Resize,
)
from .optim import sgd_momentum_step
from .tensor import BatchNormState, ConvParams, Tensor

__all__ = [
    "Activation",
    "BatchNorm2d",
    "BatchNormState",
    "Composite",
    "Conv2d",
    "ConvBNAct",
    "ConvParams",
    "ConvTranspose2d",
    "Fuse",
    "GradCheckReport",
    "MacCounter",
    "Resize",
    "Tensor",
    "grad_check",
    "sgd_momentum_step",
]

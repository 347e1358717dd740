"""Dense NCHW tensor helpers and the parameter holders used by the kernels.

Tensors are plain numpy arrays of rank 4 laid out batch/channel/height/width
with width fastest. ``float32`` is used for training and inference,
``float64`` for gradient checking.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from ..core.config import settings
from ..core.errors import NumericError, ShapeError

Tensor = npt.NDArray[np.floating]

SUPPORTED_DTYPES = (np.float32, np.float64)


def check_tensor(x: np.ndarray, name: str = "tensor") -> Tensor:
    """Validate that ``x`` is a 4-D floating array with extents >= 1."""
    if not isinstance(x, np.ndarray):
        raise ShapeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty extent: {x.shape}")
    if x.dtype.type not in SUPPORTED_DTYPES:
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")
    return x


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: extent mismatch {a.shape} vs {b.shape}")


def assert_finite(x: np.ndarray, where: str) -> None:
    """Raise when ``x`` holds NaN/Inf. Only active with ``debug_checks``."""
    if settings.debug_checks and not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values produced by {where}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    """Output extent of a convolution; empty outputs raise ``ShapeError``."""
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"convolution output is empty: size={size} k={k} stride={stride} pad={padding}"
        )
    return out


def conv_transpose_output_size(
    size: int, k: int, stride: int, padding: int, output_padding: int
) -> int:
    """Output extent of a transposed convolution."""
    if output_padding >= stride and output_padding > 0:
        raise ShapeError(
            f"output_padding ({output_padding}) must be smaller than stride ({stride})"
        )
    out = (size - 1) * stride - 2 * padding + k + output_padding
    if out < 1:
        raise ShapeError(
            f"transposed convolution output is empty: size={size} k={k} "
            f"stride={stride} pad={padding} out_pad={output_padding}"
        )
    return out


@dataclass
class ConvParams:
    """Weights and geometry of one (transposed) convolution.

    For ``conv2d`` the weight is ``(C_out, C_in, k, k)``. A transposed
    convolution stores ``(C_in, C_out, k, k)``: the array of the forward
    convolution it is the adjoint of.
    """

    weight: Tensor
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"weight must be (A, B, k, k), got {self.weight.shape}")
        if self.weight.shape[2] % 2 != 1:
            raise ShapeError(f"kernel size must be odd, got {self.weight.shape[2]}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"illegal stride/padding {self.stride}/{self.padding}")

    @property
    def kernel_size(self) -> int:
        return int(self.weight.shape[2])


@dataclass
class BatchNormState:
    """Learnable affine terms plus running statistics for one BN layer."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self) -> None:
        lengths = {a.shape for a in (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(lengths) != 1 or self.gamma.ndim != 1:
            raise ShapeError("batchnorm vectors must share one 1-D length")
        if not 0.0 < self.momentum < 1.0:
            raise ShapeError(f"batchnorm momentum must be in (0, 1), got {self.momentum}")

    @classmethod
    def create(cls, channels: int, dtype: npt.DTypeLike = np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return int(self.gamma.shape[0])


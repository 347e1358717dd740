"""Stateful layers wrapping the functional kernels.

A layer owns its learnables under stable dotted names, caches what its
backward pass needs during a train-mode forward, and stores the gradients of
its learnables in ``grads`` after ``backward``. Each layer instance is used at
most once per forward pass.
"""

import threading
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from ..core.errors import StateError
from . import functional as F
from .tensor import BatchNormState, ConvParams, Tensor


class MacCounter:
    """Context manager that collects per-layer multiply-accumulate counts.

    While active, every convolution records ``N * C_in * C_out * k * k *
    H_out * W_out`` under its layer name. Transposed convolutions report the
    dense-equivalent cost at their output extents.
    """

    _local = threading.local()

    def __init__(self) -> None:
        self.layers: Dict[str, int] = {}

    @classmethod
    def _stack(cls) -> List["MacCounter"]:
        if not hasattr(cls._local, "stack"):
            cls._local.stack = []
        return cls._local.stack

    def __enter__(self) -> "MacCounter":
        self._stack().append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        self._stack().remove(self)

    @classmethod
    def record(cls, name: str, macs: int) -> None:
        for counter in cls._stack():
            counter.layers[name] = counter.layers.get(name, 0) + macs

    @property
    def total(self) -> int:
        return sum(self.layers.values())


def kaiming_normal(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype: npt.DTypeLike
) -> np.ndarray:
    """He-normal init for ReLU layers."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Layer:
    """Base class: named learnables, running buffers and a forward cache."""

    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.grads: Dict[str, np.ndarray] = {}
        self._cache: Optional[Any] = None

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def _store(self, mode: str, cache: Any) -> None:
        if mode == "train":
            self._cache = cache

    def _pop_cache(self) -> Any:
        if self._cache is None:
            raise StateError(f"{self.name}: backward called without a train-mode forward")
        cache, self._cache = self._cache, None
        return cache

    def clear_cache(self) -> None:
        self._cache = None


class Conv2d(Layer):
    kind = "conv"

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = False,
        rng: Optional[np.random.Generator] = None,
        dtype: npt.DTypeLike = np.float32,
    ):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        weight = kaiming_normal(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        self.params = ConvParams(
            weight=weight,
            bias=np.zeros(c_out, dtype=dtype) if bias else None,
            stride=stride,
            padding=k // 2 if padding is None else padding,
        )

    @property
    def c_in(self) -> int:
        return int(self.params.weight.shape[1])

    @property
    def c_out(self) -> int:
        return int(self.params.weight.shape[0])

    def parameters(self) -> Dict[str, np.ndarray]:
        named = {f"{self.name}.weight": self.params.weight}
        if self.params.bias is not None:
            named[f"{self.name}.bias"] = self.params.bias
        return named

    def forward(self, x: Tensor, mode: str) -> Tensor:
        """Convolve ``x``; train mode keeps it for ``backward``."""
        out = F.conv2d_forward(x, self.params)
        k = self.params.kernel_size
        MacCounter.record(self.name, out.size * self.c_in * k * k)
        self._store(mode, x)
        return out

    def backward(self, grad: Tensor) -> Tensor:
        """Fill ``grads`` with weight (and bias) gradients; return the input gradient."""
        x = self._pop_cache()
        d_x, d_w, d_b = F.conv2d_backward(x, self.params, grad)
        self.grads = {f"{self.name}.weight": d_w}
        if d_b is not None:
            self.grads[f"{self.name}.bias"] = d_b
        return d_x


class ConvTranspose2d(Layer):
    """Stride-2 learned upsampling used by the double-step head."""

    kind = "tconv"

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int = 3,
        stride: int = 2,
        padding: int = 1,
        output_padding: int = 1,
        bias: bool = False,
        rng: Optional[np.random.Generator] = None,
        dtype: npt.DTypeLike = np.float32,
    ):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        weight = kaiming_normal(rng, (c_in, c_out, k, k), c_in * k * k, dtype)
        self.params = ConvParams(
            weight=weight,
            bias=np.zeros(c_out, dtype=dtype) if bias else None,
            stride=stride,
            padding=padding,
        )
        self.output_padding = output_padding

    def parameters(self) -> Dict[str, np.ndarray]:
        named = {f"{self.name}.weight": self.params.weight}
        if self.params.bias is not None:
            named[f"{self.name}.bias"] = self.params.bias
        return named

    def forward(self, x: Tensor, mode: str) -> Tensor:
        """Upsample ``x``; MACs are counted per output element."""
        out = F.conv2d_transpose_forward(x, self.params, self.output_padding)
        k = self.params.kernel_size
        MacCounter.record(self.name, out.size * x.shape[1] * k * k)
        self._store(mode, x)
        return out

    def backward(self, grad: Tensor) -> Tensor:
        x = self._pop_cache()
        d_x, d_w, d_b = F.conv2d_transpose_backward(x, self.params, grad)
        self.grads = {f"{self.name}.weight": d_w}
        if d_b is not None:
            self.grads[f"{self.name}.bias"] = d_b
        return d_x


class BatchNorm2d(Layer):
    kind = "bn"

    def __init__(self, name: str, channels: int, dtype: npt.DTypeLike = np.float32):
        super().__init__(name)
        self.state = BatchNormState.create(channels, dtype)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{self.name}.gamma": self.state.gamma, f"{self.name}.beta": self.state.beta}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.name}.running_mean": self.state.running_mean,
            f"{self.name}.running_var": self.state.running_var,
        }

    def forward(self, x: Tensor, mode: str) -> Tensor:
        """Batch statistics in ``"train"`` mode, running statistics in ``"infer"``."""
        out = F.batchnorm_forward(x, self.state, mode)
        self._store(mode, x)
        return out

    def backward(self, grad: Tensor) -> Tensor:
        x = self._pop_cache()
        d_x, d_gamma, d_beta = F.batchnorm_backward(x, self.state, grad)
        self.grads = {f"{self.name}.gamma": d_gamma, f"{self.name}.beta": d_beta}
        return d_x


class Activation(Layer):
    kind = "act"

    def __init__(self, name: str, fn: str = "relu"):
        super().__init__(name)
        self.fn = fn
        self.last_pattern: Optional[np.ndarray] = None

    def forward(self, x: Tensor, mode: str) -> Tensor:
        """Apply ``fn``; a train-mode ReLU records its on/off pattern."""
        out = F.activation(x, self.fn)
        if self.fn == "relu" and mode == "train":
            self.last_pattern = x > 0
        self._store(mode, (x, out))
        return out

    def backward(self, grad: Tensor) -> Tensor:
        x, out = self._pop_cache()
        return F.activation_backward(x, out, grad, self.fn)


class Resize(Layer):
    kind = "resize"

    def forward(self, x: Tensor, mode: str, size: Tuple[int, int]) -> Tensor:
        """Bilinear resize to ``size`` (height, width)."""
        out = F.bilinear_resize(x, size[0], size[1])
        self._store(mode, x.shape[2:])
        return out

    def backward(self, grad: Tensor) -> Tensor:
        in_h, in_w = self._pop_cache()
        return F.bilinear_resize_backward(grad, in_h, in_w)


class Fuse(Layer):
    kind = "fuse"

    def __init__(self, name: str, mode: str = "sum"):
        super().__init__(name)
        self.mode = mode

    def forward(self, x_h: Tensor, x_s: Tensor, mode: str) -> Tensor:
        """Fuse HR features ``x_h`` with the guide ``x_s``."""
        out = F.fuse(x_h, x_s, self.mode)
        self._store(mode, (x_h, x_s) if self.mode == "mul" else True)
        return out

    def backward(self, grad: Tensor) -> Tuple[Tensor, Tensor]:
        """Gradients for the HR input and the guide, in that order."""
        cache = self._pop_cache()
        if self.mode == "sum":
            return grad, grad
        x_h, x_s = cache
        return F.fuse_backward(x_h, x_s, grad, self.mode)


class Composite(Layer):
    """A fixed chain of single-input layers applied in order."""

    kind = "composite"

    def __init__(self, name: str, layers: List[Layer]):
        super().__init__(name)
        self.layers = layers

    def parameters(self) -> Dict[str, np.ndarray]:
        named: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            named.update(layer.parameters())
        return named

    def buffers(self) -> Dict[str, np.ndarray]:
        named: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            named.update(layer.buffers())
        return named

    def forward(self, x: Tensor, mode: str) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, grad: Tensor) -> Tensor:
        self.grads = {}
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            self.grads.update(layer.grads)
        return grad

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer.clear_cache()

    def activation_pattern(self) -> List[np.ndarray]:
        return [
            layer.last_pattern
            for layer in self.layers
            if isinstance(layer, Activation) and layer.last_pattern is not None
        ]


class ConvBNAct(Composite):
    """Conv-BN with an optional activation ("Conv2d" in the architecture table)."""

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int = 3,
        stride: int = 1,
        act: Optional[str] = "relu",
        rng: Optional[np.random.Generator] = None,
        dtype: npt.DTypeLike = np.float32,
    ):
        layers: List[Layer] = [
            Conv2d(f"{name}.conv", c_in, c_out, k, stride, bias=False, rng=rng, dtype=dtype),
            BatchNorm2d(f"{name}.bn", c_out, dtype=dtype),
        ]
        if act is not None:
            layers.append(Activation(f"{name}.act", act))
        super().__init__(name, layers)

    @property
    def conv(self) -> Conv2d:
        return self.layers[0]  # type: ignore[return-value]

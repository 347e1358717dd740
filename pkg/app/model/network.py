"""HrSegNet executor: builds layers from the plan and runs forward/backward."""

import logging
import zlib
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from ..core.config import settings
from ..core.errors import ShapeError, StateError
from ..nn.layers import (
    Activation,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Fuse,
    Layer,
    Resize,
)
from ..nn.tensor import Tensor, check_tensor
from .config import ModelConfig
from .plan import LayerPlan, PlanRecord, build_plan, conv_bn_act_names

logger = logging.getLogger(__name__)

HEAD_UP = ["head.up.tconv", "head.up.bn", "head.up.act"]


class ForwardOutput(NamedTuple):
    primary: Tensor
    aux: List[Tensor]


def _layer_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per layer name, so adding or removing a layer never shifts another's weights
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _make_layer(rec: PlanRecord, config: ModelConfig, seed: int, dtype: npt.DTypeLike) -> Layer:
    if rec.kind == "conv":
        return Conv2d(
            rec.name, rec.c_in, rec.c_out, rec.k, rec.stride, bias=rec.bias,
            rng=_layer_rng(seed, rec.name), dtype=dtype,
        )
    if rec.kind == "tconv":
        return ConvTranspose2d(
            rec.name, rec.c_in, rec.c_out, rec.k, rec.stride, padding=1, output_padding=1,
            bias=rec.bias, rng=_layer_rng(seed, rec.name), dtype=dtype,
        )
    if rec.kind == "bn":
        return BatchNorm2d(rec.name, rec.c_out, dtype=dtype)
    if rec.kind == "act":
        return Activation(rec.name, rec.activation)
    if rec.kind == "resize":
        return Resize(rec.name)
    if rec.kind == "fuse":
        return Fuse(rec.name, config.fusion)
    raise ShapeError(f"{rec.name}: unknown layer kind '{rec.kind}'")


class HrSegNet:
    """An HrSegNet model with named learnables and BN running statistics.

    ``forward(batch, "train")`` caches what ``backward`` needs and emits one
    auxiliary output per configured aux head; ``"infer"`` uses the running
    statistics, emits no auxiliary outputs and leaves the model untouched.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype: npt.DTypeLike = np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        size = settings.reference_input_size
        self.plan: LayerPlan = build_plan(config, size, size)
        self.layers: Dict[str, Layer] = {
            rec.name: _make_layer(rec, config, seed, self.dtype) for rec in self.plan
        }
        self._train_ready = False
        self.input_grad: Optional[Tensor] = None
        self.check_registry()

    # registries

    def check_registry(self) -> None:
        """Every learnable plan record owns its tensors, under its own name, exactly once."""
        owners: Dict[str, str] = {}
        for rec in self.plan:
            layer = self.layers[rec.name]
            owned = [*layer.parameters(), *layer.buffers()]
            if bool(owned) != rec.has_learnables:
                raise StateError(
                    f"layer '{rec.name}' ({rec.kind}) registers {len(owned)} tensors"
                )
            for name in owned:
                if not name.startswith(rec.name + "."):
                    raise StateError(f"tensor '{name}' is registered by layer '{rec.name}'")
                if name in owners:
                    raise StateError(
                        f"tensor '{name}' is registered by '{owners[name]}' and '{rec.name}'"
                    )
                owners[name] = rec.name

    def parameters(self) -> Dict[str, np.ndarray]:
        named: Dict[str, np.ndarray] = {}
        for layer in self.layers.values():
            named.update(layer.parameters())
        return named

    def buffers(self) -> Dict[str, np.ndarray]:
        named: Dict[str, np.ndarray] = {}
        for layer in self.layers.values():
            named.update(layer.buffers())
        return named

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters followed by BN running statistics, in plan order."""
        named: Dict[str, np.ndarray] = {}
        for layer in self.layers.values():
            named.update(layer.parameters())
            named.update(layer.buffers())
        return named

    @property
    def decay_names(self) -> List[str]:
        """Learnables that receive weight decay: conv and tconv weights."""
        return [
            name
            for layer in self.layers.values()
            if isinstance(layer, (Conv2d, ConvTranspose2d))
            for name in layer.parameters()
            if name.endswith(".weight")
        ]

    def plan_for(self, input_h: int, input_w: int) -> LayerPlan:
        """Layer plan of this model at another input size."""
        return build_plan(self.config, input_h, input_w)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    # execution helpers

    def _run(self, names: Sequence[str], x: Tensor, mode: str) -> Tensor:
        for name in names:
            x = self.layers[name].forward(x, mode)
        return x

    def _back(self, names: Sequence[str], grad: Tensor) -> Tensor:
        for name in reversed(names):
            grad = self.layers[name].backward(grad)
        return grad

    def _check_hr(self, x: Tensor, plan: LayerPlan, where: str) -> None:
        if x.shape[2:] != (plan.hr_h, plan.hr_w):
            raise ShapeError(
                f"{where}: HR feature is {x.shape[2]}x{x.shape[3]}, "
                f"expected {plan.hr_h}x{plan.hr_w}"
            )

    def _stem_names(self) -> List[List[str]]:
        return [conv_bn_act_names(f"stem.{i}") for i in range(len(self.config.stem_strides))]

    def _head_names(self) -> List[str]:
        return HEAD_UP + ["head.cls"] if self.config.head == "double" else ["head.cls"]

    # passes

    def forward(self, batch: Tensor, mode: str = "infer") -> ForwardOutput:
        """Run the network on an (N, 3, H, W) batch."""
        if mode not in ("train", "infer"):
            raise ShapeError(f"unknown mode '{mode}'")
        check_tensor(batch, "batch")
        _, c, h, w = batch.shape
        if c != 3:
            raise ShapeError(f"batch must have 3 channels, got {c}")
        plan = self.plan_for(h, w)
        cfg = self.config
        train = mode == "train"
        if self._train_ready and not train:
            self._train_ready = False

        x = batch.astype(self.dtype, copy=False)
        for names in self._stem_names():
            x = self._run(names, x, mode)
        self._check_hr(x, plan, "stem")

        hr_size = (plan.hr_h, plan.hr_w)
        hr = x
        sg = x
        aux: List[Tensor] = []
        for j in range(1, cfg.num_blocks + 1):
            if cfg.guidance == "multi":
                sg = hr
            for l in range(cfg.layers_per_block):
                hr = self._run(conv_bn_act_names(f"block{j}.hr.{l}"), hr, mode)
                self._check_hr(hr, plan, f"block{j}.hr.{l}")
                if cfg.guidance == "none":
                    continue
                sg = self._run(conv_bn_act_names(f"block{j}.sg.{l}"), sg, mode)
                g = self.layers[f"block{j}.up.{l}"].forward(sg, mode, size=hr_size)
                g = self._run(conv_bn_act_names(f"block{j}.guide.{l}"), g, mode)
                hr = self.layers[f"block{j}.fuse.{l}"].forward(hr, g, mode)
            if train and j in cfg.aux_blocks:
                logits = self.layers[f"aux.h{j}.cls"].forward(hr, mode)
                aux.append(self.layers[f"aux.h{j}.resize"].forward(logits, mode, size=(h, w)))

        out = self._run(self._head_names(), hr, mode)
        primary = self.layers["head.resize"].forward(out, mode, size=(h, w))
        if train:
            self._train_ready = True
        return ForwardOutput(primary=primary, aux=aux)

    def backward(
        self, grad_primary: Tensor, grad_aux: Optional[Sequence[Optional[Tensor]]] = None
    ) -> Dict[str, np.ndarray]:
        """Reverse pass of the last train-mode forward.

        ``grad_aux`` holds one gradient (or None) per configured aux head.
        Returns the gradient of every learnable; the gradient with respect
        to the input batch is left in ``input_grad``.
        """
        if not self._train_ready:
            raise StateError("backward requires a preceding train-mode forward")
        cfg = self.config
        blocks = cfg.aux_blocks
        grads_aux = list(grad_aux) if grad_aux is not None else [None] * len(blocks)
        if len(grads_aux) != len(blocks):
            raise ShapeError(f"expected {len(blocks)} aux gradients, got {len(grads_aux)}")
        by_block = dict(zip(blocks, grads_aux))
        for layer in self.layers.values():
            layer.grads = {}
        self._train_ready = False

        d_hr = self.layers["head.resize"].backward(grad_primary)
        d_hr = self._back(self._head_names(), d_hr)
        carry: Optional[Tensor] = None
        for j in range(cfg.num_blocks, 0, -1):
            if j in by_block:
                resize = self.layers[f"aux.h{j}.resize"]
                g_aux = by_block[j]
                if g_aux is None:
                    g_aux = np.zeros(grad_primary.shape, dtype=grad_primary.dtype)
                d_aux = self.layers[f"aux.h{j}.cls"].backward(resize.backward(g_aux))
                d_hr = d_hr + d_aux
            d_sg = carry
            for l in range(cfg.layers_per_block - 1, -1, -1):
                if cfg.guidance != "none":
                    d_hr, d_g = self.layers[f"block{j}.fuse.{l}"].backward(d_hr)
                    d_g = self._back(conv_bn_act_names(f"block{j}.guide.{l}"), d_g)
                    d_g = self.layers[f"block{j}.up.{l}"].backward(d_g)
                    d_sg = d_g if d_sg is None else d_sg + d_g
                    d_sg = self._back(conv_bn_act_names(f"block{j}.sg.{l}"), d_sg)
                d_hr = self._back(conv_bn_act_names(f"block{j}.hr.{l}"), d_hr)
            if cfg.guidance == "multi":
                d_hr = d_hr + d_sg
            else:
                carry = d_sg
        if carry is not None:
            d_hr = d_hr + carry
        for names in reversed(self._stem_names()):
            d_hr = self._back(names, d_hr)
        self.input_grad = d_hr
        return self.gradients()

    def gradients(self) -> Dict[str, np.ndarray]:
        params = self.parameters()
        collected: Dict[str, np.ndarray] = {}
        for layer in self.layers.values():
            collected.update(layer.grads)
        return {
            name: collected[name] if name in collected else np.zeros_like(value)
            for name, value in params.items()
        }

    def clear_cache(self) -> None:
        for layer in self.layers.values():
            layer.clear_cache()
        self._train_ready = False

    def activation_pattern(self) -> List[np.ndarray]:
        return [
            layer.last_pattern
            for layer in self.layers.values()
            if isinstance(layer, Activation) and layer.last_pattern is not None
        ]

    def predict(self, batch: Tensor) -> np.ndarray:
        """Class map (N, 1, H, W) from an infer-mode forward."""
        logits = self.forward(batch, "infer").primary
        return np.argmax(logits, axis=1)[:, None].astype(np.uint8)


class GradCheckView:
    """Adapter presenting a model's primary output as a single-output layer."""

    def __init__(self, model: HrSegNet):
        self.model = model
        self.name = "model"
        self.grads: Dict[str, np.ndarray] = {}

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.model.parameters()

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        return self.model.forward(x, mode).primary

    def backward(self, grad: Tensor) -> Tensor:
        self.grads = self.model.backward(grad)
        assert self.model.input_grad is not None
        return self.model.input_grad

    def activation_pattern(self) -> List[np.ndarray]:
        return self.model.activation_pattern()

    def clear_cache(self) -> None:
        self.model.clear_cache()


def build_model(
    config: Union[ModelConfig, dict], seed: int = 0, dtype: npt.DTypeLike = np.float32
) -> HrSegNet:
    """Build an HrSegNet with kaiming-normal convolutions, BN (1, 0) and zero biases."""
    if not isinstance(config, ModelConfig):
        config = ModelConfig.from_mapping(config)
    model = HrSegNet(config, seed=seed, dtype=dtype)
    logger.info(
        "built HrSegNet base=%d hr=1/%d guidance=%s fusion=%s head=%s aux=%s (%d params)",
        config.base, config.downsample, config.guidance, config.fusion, config.head,
        ",".join(config.aux_heads) or "-", model.parameter_count(),
    )
    return model


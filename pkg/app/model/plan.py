"""Symbolic layer plan of an HrSegNet model at a given input size.

The plan is the single description of the architecture: the network builds
its layers from it, checks runtime extents against it, and the complexity
analyzer sums convolution costs over it without executing anything.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, List, Tuple

from ..core.errors import ConfigError, ShapeError
from ..nn.tensor import conv_output_size, conv_transpose_output_size
from .config import ModelConfig

ROLES = ("stem", "hr", "sg", "fuse", "head", "aux")


@dataclass(frozen=True)
class PlanRecord:
    name: str
    kind: str  # conv | tconv | bn | act | resize | fuse
    c_in: int
    c_out: int
    k: int
    stride: int
    out_h: int
    out_w: int
    role: str
    bias: bool = False
    activation: str = ""

    @property
    def has_learnables(self) -> bool:
        return self.kind in ("conv", "tconv", "bn")


@dataclass(frozen=True)
class LayerPlan:
    input_h: int
    input_w: int
    hr_h: int
    hr_w: int
    records: Tuple[PlanRecord, ...]

    def __iter__(self) -> Iterator[PlanRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def by_name(self) -> Dict[str, PlanRecord]:
        return {r.name: r for r in self.records}

    def convolutions(self) -> List[PlanRecord]:
        return [r for r in self.records if r.kind in ("conv", "tconv")]


def conv_bn_act_names(prefix: str) -> List[str]:
    return [f"{prefix}.conv", f"{prefix}.bn", f"{prefix}.act"]


class _Builder:
    def __init__(self) -> None:
        self.records: List[PlanRecord] = []

    def conv_bn_act(
        self, prefix: str, c_in: int, c_out: int, k: int, stride: int,
        h: int, w: int, role: str, act: str = "relu",
    ) -> Tuple[int, int]:
        pad = k // 2
        out_h = conv_output_size(h, k, stride, pad)
        out_w = conv_output_size(w, k, stride, pad)
        self.records.append(
            PlanRecord(f"{prefix}.conv", "conv", c_in, c_out, k, stride, out_h, out_w, role)
        )
        self.records.append(
            PlanRecord(f"{prefix}.bn", "bn", c_out, c_out, 1, 1, out_h, out_w, role)
        )
        self.records.append(
            PlanRecord(
                f"{prefix}.act", "act", c_out, c_out, 1, 1, out_h, out_w, role, activation=act
            )
        )
        return out_h, out_w

    def add(self, *args, **kwargs) -> None:
        self.records.append(PlanRecord(*args, **kwargs))


def _block_plan(
    b: _Builder, config: ModelConfig, j: int, hr: Tuple[int, int],
    sg: Tuple[int, int, int], full: Tuple[int, int],
) -> Tuple[int, int, int]:
    """Append block ``j``; ``sg`` is (channels, h, w) of the SG input."""
    base = config.base
    hr_h, hr_w = hr
    sg_c, sg_h, sg_w = sg
    for l in range(config.layers_per_block):
        got = b.conv_bn_act(f"block{j}.hr.{l}", base, base, 3, 1, hr_h, hr_w, "hr")
        if got != (hr_h, hr_w):
            raise ShapeError(f"block{j}.hr.{l} changes the HR extents to {got}")
        if config.guidance == "none":
            continue
        c_out = base * 2**j
        if config.guidance == "single":
            stride = 2 if l == 0 else 1
        else:
            # multi: starts at HR extents, halves after the first layer
            stride = 1 if l == 0 else 2
        sg_h, sg_w = b.conv_bn_act(f"block{j}.sg.{l}", sg_c, c_out, 3, stride, sg_h, sg_w, "sg")
        sg_c = c_out
        b.add(f"block{j}.up.{l}", "resize", sg_c, sg_c, 0, 1, hr_h, hr_w, "fuse")
        b.conv_bn_act(
            f"block{j}.guide.{l}", sg_c, base, 1, 1, hr_h, hr_w, "fuse",
            act=config.guidance_activation,
        )
        b.add(f"block{j}.fuse.{l}", "fuse", base, base, 0, 1, hr_h, hr_w, "fuse")
    if j in config.aux_blocks:
        b.add(f"aux.h{j}.cls", "conv", base, config.num_classes, 3, 1, hr_h, hr_w, "aux", bias=True)
        b.add(
            f"aux.h{j}.resize", "resize", config.num_classes, config.num_classes, 0, 1,
            full[0], full[1], "aux",
        )
    return sg_c, sg_h, sg_w


@lru_cache(maxsize=64)
def build_plan(config: ModelConfig, input_h: int, input_w: int) -> LayerPlan:
    """Walk the architecture symbolically for an ``input_h x input_w`` input.

    Raises ``ShapeError`` if the input is too small for the configured HR
    resolution.
    """
    minimum = 4 * config.downsample
    if input_h < minimum or input_w < minimum:
        raise ShapeError(
            f"input {input_h}x{input_w} is smaller than {minimum}x{minimum} "
            f"required for hr_resolution 1/{config.downsample}"
        )
    b = _Builder()
    h, w, c_in = input_h, input_w, 3
    for i, stride in enumerate(config.stem_strides):
        h, w = b.conv_bn_act(f"stem.{i}", c_in, config.base, 3, stride, h, w, "stem")
        c_in = config.base
    hr = (h, w)

    sg = (config.base, h, w)
    for j in range(1, config.num_blocks + 1):
        block_input = sg if config.guidance == "single" else (config.base, h, w)
        sg = _block_plan(b, config, j, hr, block_input, (input_h, input_w))

    base, classes = config.base, config.num_classes
    if config.head == "double":
        up_h = conv_transpose_output_size(h, 3, 2, 1, 1)
        up_w = conv_transpose_output_size(w, 3, 2, 1, 1)
        b.add("head.up.tconv", "tconv", base, base, 3, 2, up_h, up_w, "head")
        b.add("head.up.bn", "bn", base, base, 1, 1, up_h, up_w, "head")
        b.add("head.up.act", "act", base, base, 1, 1, up_h, up_w, "head", activation="relu")
        b.add("head.cls", "conv", base, classes, 3, 1, up_h, up_w, "head", bias=True)
    else:
        b.add("head.cls", "conv", base, classes, 3, 1, h, w, "head", bias=True)
    b.add("head.resize", "resize", classes, classes, 0, 1, input_h, input_w, "head")

    plan = LayerPlan(input_h, input_w, hr[0], hr[1], tuple(b.records))
    _check_plan(plan)
    return plan


def _check_plan(plan: LayerPlan) -> None:
    names = [r.name for r in plan]
    if len(set(names)) != len(names):
        raise ConfigError("layer plan has duplicate layer names")
    for r in plan:
        if r.role not in ROLES:
            raise ConfigError(f"{r.name}: unknown role '{r.role}'")
        if r.role in ("hr", "fuse") and (r.out_h, r.out_w) != (plan.hr_h, plan.hr_w):
            raise ShapeError(
                f"{r.name} runs at {r.out_h}x{r.out_w}, HR path is {plan.hr_h}x{plan.hr_w}"
            )

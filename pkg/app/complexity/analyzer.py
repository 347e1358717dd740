"""Analytic parameter and FLOPs accounting over a layer plan.

One FLOP is one multiply-accumulate: a convolution costs
``C_in * C_out * k * k * H_out * W_out`` (bias ignored), a transposed
convolution is counted at its output extents. BN contributes ``2 * C``
parameters; BN, activations, resizes and fusions cost nothing. Auxiliary
heads only run during training, so their parameters are counted and their
FLOPs are not.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel

from ..core.errors import ConfigError
from ..model.config import ModelConfig
from ..model.plan import ROLES, PlanRecord, build_plan


def conv_flops(c_in: int, c_out: int, k: int, out_h: int, out_w: int) -> int:
    """MACs of one convolution: ``c_in * c_out * k * k * out_h * out_w``."""
    if min(c_in, c_out, k, out_h, out_w) < 1:
        raise ConfigError(
            f"conv_flops arguments must be >= 1, got {(c_in, c_out, k, out_h, out_w)}"
        )
    return c_in * c_out * k * k * out_h * out_w


def record_params(rec: PlanRecord) -> int:
    if rec.kind in ("conv", "tconv"):
        return rec.c_in * rec.c_out * rec.k * rec.k + (rec.c_out if rec.bias else 0)
    if rec.kind == "bn":
        return 2 * rec.c_out
    return 0


def record_flops(rec: PlanRecord) -> int:
    if rec.kind not in ("conv", "tconv") or rec.role == "aux":
        return 0
    return conv_flops(rec.c_in, rec.c_out, rec.k, rec.out_h, rec.out_w)


class LayerCost(BaseModel):
    name: str
    kind: str
    role: str
    c_in: int
    c_out: int
    k: int
    stride: int
    out_h: int
    out_w: int
    params: int
    flops: int


class RoleTotals(BaseModel):
    params: int = 0
    flops: int = 0


class ComplexityReport(BaseModel):
    """Per-layer costs, per-role subtotals and model totals."""

    input_h: int
    input_w: int
    layers: List[LayerCost]
    roles: Dict[str, RoleTotals]
    params: int
    flops: int

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    def layer_flops(self) -> Dict[str, int]:
        """FLOPs of every layer that executes at inference."""
        return {c.name: c.flops for c in self.layers if c.flops}

    def totals_line(self) -> str:
        return f"params={self.params_m:.4f} flops={self.gflops:.4f}"

    def table(self, include_free: bool = False) -> str:
        """Plain-text per-layer table followed by role subtotals.

        Layers with neither parameters nor FLOPs are listed only when
        ``include_free`` is set.
        """
        header = (
            f"{'layer':<24} {'kind':<6} {'role':<5} {'c_in':>5} {'c_out':>5} {'k':>2} "
            f"{'s':>2} {'out':>11} {'params':>10} {'MFLOPs':>10}"
        )
        lines = [f"HrSegNet complexity @ {self.input_h}x{self.input_w}", header, "-" * len(header)]
        for c in self.layers:
            if not include_free and not (c.params or c.flops):
                continue
            lines.append(
                f"{c.name:<24} {c.kind:<6} {c.role:<5} {c.c_in:>5} {c.c_out:>5} {c.k:>2} "
                f"{c.stride:>2} {f'{c.out_h}x{c.out_w}':>11} {c.params:>10} {c.flops / 1e6:>10.2f}"
            )
        lines.append("-" * len(header))
        for role in ROLES:
            totals = self.roles.get(role)
            if totals is None:
                continue
            lines.append(
                f"{'subtotal ' + role:<24} {'':<6} {'':<5} {'':>5} {'':>5} {'':>2} {'':>2} "
                f"{'':>11} {totals.params:>10} {totals.flops / 1e6:>10.2f}"
            )
        return "\n".join(lines)


def model_complexity(
    config: ModelConfig, input_h: int = 400, input_w: Optional[int] = None
) -> ComplexityReport:
    """Sum costs over ``config``'s plan at ``input_h x input_w`` without executing it."""
    input_w = input_h if input_w is None else input_w
    plan = build_plan(config, input_h, input_w)
    layers: List[LayerCost] = []
    roles: Dict[str, RoleTotals] = {}
    for rec in plan:
        cost = LayerCost(
            name=rec.name,
            kind=rec.kind,
            role=rec.role,
            c_in=rec.c_in,
            c_out=rec.c_out,
            k=rec.k,
            stride=rec.stride,
            out_h=rec.out_h,
            out_w=rec.out_w,
            params=record_params(rec),
            flops=record_flops(rec),
        )
        layers.append(cost)
        totals = roles.setdefault(rec.role, RoleTotals())
        totals.params += cost.params
        totals.flops += cost.flops
    return ComplexityReport(
        input_h=input_h,
        input_w=input_w,
        layers=layers,
        roles=roles,
        params=sum(c.params for c in layers),
        flops=sum(c.flops for c in layers),
    )

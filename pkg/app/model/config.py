"""Declarative description of one HrSegNet variant."""

import re
from fractions import Fraction
from typing import Any, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.errors import ConfigError

AUX_HEAD_PATTERN = re.compile(r"^h(\d+)$")
HR_RESOLUTIONS = {2: (2, 1), 4: (2, 2), 8: (2, 2, 2)}


class ModelConfig(BaseModel):
    """Complete wiring choice for one HrSegNet model.

    ``hr_resolution`` is the HR-path size relative to the input (1/2, 1/4 or
    1/8). ``guidance`` ``none`` gives the HR-path-only ablation model.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    base: int = Field(default=32, ge=1)
    hr_resolution: float = Field(default=0.25)
    num_blocks: int = Field(default=3, ge=1)
    layers_per_block: int = Field(default=3, ge=1)
    guidance: Literal["none", "single", "multi"] = "single"
    fusion: Literal["sum", "mul"] = "sum"
    head: Literal["single", "double"] = "double"
    aux_heads: Tuple[str, ...] = ("h1", "h2")
    num_classes: int = Field(default=2, ge=2)

    @field_validator("hr_resolution", mode="before")
    @classmethod
    def _parse_ratio(cls, value: Any) -> float:
        if isinstance(value, str):
            value = float(Fraction(value.strip()))
        value = float(value)
        if value <= 0 or round(1 / value) not in HR_RESOLUTIONS:
            raise ValueError("hr_resolution must be one of 1/2, 1/4, 1/8")
        return 1.0 / round(1 / value)

    @field_validator("aux_heads", mode="before")
    @classmethod
    def _parse_heads(cls, value: Any) -> Tuple[str, ...]:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        heads = tuple(value)
        for head in heads:
            if not AUX_HEAD_PATTERN.match(head):
                raise ValueError(f"aux head '{head}' must look like h1, h2, ...")
        return tuple(sorted(set(heads), key=lambda h: int(h[1:])))

    @model_validator(mode="after")
    def _heads_exist(self) -> "ModelConfig":
        for head in self.aux_heads:
            if not 1 <= int(head[1:]) <= self.num_blocks:
                raise ValueError(f"aux head '{head}' refers to a block that does not exist")
        return self

    @property
    def downsample(self) -> int:
        return int(round(1 / self.hr_resolution))

    @property
    def stem_strides(self) -> Tuple[int, ...]:
        return HR_RESOLUTIONS[self.downsample]

    @property
    def aux_blocks(self) -> Tuple[int, ...]:
        return tuple(int(h[1:]) for h in self.aux_heads)

    @property
    def guidance_activation(self) -> str:
        return "relu" if self.fusion == "sum" else "sigmoid"

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelConfig":
        """Validate ``values``; failures become ``ConfigError`` naming the key."""
        try:
            return cls.model_validate(values)
        except ValidationError as exc:
            raise ConfigError(describe_validation_error(exc, "model")) from exc


def describe_validation_error(exc: ValidationError, section: str) -> str:
    first = exc.errors()[0]
    key = ".".join(str(part) for part in first.get("loc", ())) or "<root>"
    if first.get("type") == "extra_forbidden":
        return f"unknown key '{key}' in [{section}]"
    return f"invalid value for '{key}' in [{section}]: {first.get('msg')}"

"""Training hyperparameters."""

from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..core.errors import ConfigError
from ..model.config import describe_validation_error

# Pixels of the reference 400x400 crop that ``min_kept`` is quoted for.
OHEM_REFERENCE_PIXELS = 400 * 400


class OhemConfig(BaseModel):
    """Online hard example mining over the pixels of one batch."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = True
    prob_thresh: float = Field(default=0.7, gt=0.0, le=1.0)
    min_kept: int = Field(default=2500, ge=1)

    def scaled_min_kept(self, batch: int, height: int, width: int) -> int:
        """``min_kept`` scaled by each image's pixel count, summed over the batch."""
        per_image = self.min_kept * height * width / OHEM_REFERENCE_PIXELS
        return max(1, int(round(per_image * batch)))


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_iters: int = Field(default=2000, ge=0)
    warmup_iters: int = Field(default=100, ge=0)
    base_lr: float = Field(default=0.01, gt=0.0)
    lr_power: float = Field(default=0.9, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    batch_size: int = Field(default=4, ge=1)
    alpha: float = Field(default=0.5, ge=0.0)
    ohem: OhemConfig = Field(default_factory=OhemConfig)
    seed: int = 0
    checkpoint_interval: int = Field(default=0, ge=0)
    log_interval: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _warmup_before_end(self) -> "TrainConfig":
        if self.max_iters and self.warmup_iters >= self.max_iters:
            raise ValueError("warmup_iters must be smaller than max_iters")
        if not self.max_iters and self.warmup_iters:
            raise ValueError("warmup_iters must be 0 when max_iters is 0")
        return self

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from flat ``[train]`` keys; ``ohem_*`` keys fill the nested OHEM block."""
        flat: dict = {}
        ohem: dict = {}
        for key, value in values.items():
            if key.startswith("ohem_"):
                ohem[key[len("ohem_"):]] = value
            else:
                flat[key] = value
        if ohem:
            flat["ohem"] = ohem
        try:
            return cls.model_validate(flat)
        except ValidationError as exc:
            raise ConfigError(_flatten_ohem(describe_validation_error(exc, "train"))) from exc

    def with_overrides(self, **changes: Any) -> "TrainConfig":
        """Copy with some fields replaced (fine-tuning runs), re-validated."""
        data = self.model_dump()
        data.update(changes)
        try:
            return TrainConfig.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(describe_validation_error(exc, "train")) from exc


def _flatten_ohem(message: str) -> str:
    return message.replace("'ohem.", "'ohem_")

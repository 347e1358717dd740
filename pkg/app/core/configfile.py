"""Run configuration files: ``key = value`` text with [model], [train], [data] sections.

``[model]`` may start from a named variant with ``preset = b32``; the other
keys then override the preset's fields. ``[train]`` keys prefixed ``ohem_``
fill the OHEM settings. Unknown sections and keys are errors.
"""

import configparser
from pathlib import Path
from typing import Dict, Union

from pydantic import BaseModel, ConfigDict, Field

from ..data.augment import AugmentParams
from ..model.config import ModelConfig
from ..model.presets import get_preset
from ..training.config import TrainConfig
from .errors import ConfigError

SECTIONS = ("model", "train", "data")


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: AugmentParams = Field(default_factory=AugmentParams)


def _model_section(values: Dict[str, str]) -> ModelConfig:
    values = dict(values)
    preset = values.pop("preset", None)
    if preset is None:
        return ModelConfig.from_mapping(values)
    base = get_preset(preset).model_dump()
    base.update(values)
    return ModelConfig.from_mapping(base)


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse INI text with optional ``[model]``, ``[train]`` and ``[data]`` sections."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__defaults__"
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown section [{unknown[0]}]")
    sections = {name: dict(parser[name]) if parser.has_section(name) else {} for name in SECTIONS}
    try:
        return RunConfig(
            model=_model_section(sections["model"]),
            train=TrainConfig.from_mapping(sections["train"]),
            data=AugmentParams.from_mapping(sections["data"]),
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc.message}") from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and parse a run config file; unreadable files raise ``ConfigError``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_run_config(text, str(path))

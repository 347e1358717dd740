"""Named model variants: the B16/B32/B48 family and the ablation models."""

from typing import Callable, Dict, List

from ..core.errors import ConfigError
from .config import ModelConfig


def hrsegnet(base: int) -> ModelConfig:
    """Full model: 1/4 HR path, single guidance, sum fusion, double head, aux h1/h2."""
    return ModelConfig(
        base=base,
        hr_resolution=0.25,
        guidance="single",
        fusion="sum",
        head="double",
        aux_heads=("h1", "h2"),
    )


def hr_only(ratio: str = "1/4", base: int = 32) -> ModelConfig:
    """HR path alone (no semantic guidance) at the given resolution ratio."""
    return ModelConfig(base=base, hr_resolution=ratio, guidance="none", head="double", aux_heads=())


def sg_variant(guidance: str, fusion: str = "sum", base: int = 32) -> ModelConfig:
    """Guidance ablation: single or multi-resolution SG path with a single-step head."""
    return ModelConfig(base=base, guidance=guidance, fusion=fusion, head="single", aux_heads=())


PRESETS: Dict[str, Callable[[], ModelConfig]] = {
    "b16": lambda: hrsegnet(16),
    "b32": lambda: hrsegnet(32),
    "b48": lambda: hrsegnet(48),
    "hr_only_half": lambda: hr_only("1/2"),
    "hr_only_quarter": lambda: hr_only("1/4"),
    "hr_only_eighth": lambda: hr_only("1/8"),
    "sg_single": lambda: sg_variant("single"),
    "sg_multi": lambda: sg_variant("multi"),
    "sg_single_mul": lambda: sg_variant("single", "mul"),
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> ModelConfig:
    """Model config of a named variant; unknown names raise ``ConfigError``."""
    try:
        return PRESETS[name.lower()]()
    except KeyError:
        raise ConfigError(
            f"unknown preset '{name}' (known: {', '.join(preset_names())})"
        ) from None

"""HrSegNet model: declarative config, layer plan, executor and checkpoints."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import ModelConfig
from .network import ForwardOutput, GradCheckView, HrSegNet, build_model
from .plan import LayerPlan, PlanRecord, build_plan
from .presets import get_preset, preset_names

__all__ = [
    "ForwardOutput",
    "GradCheckView",
    "HrSegNet",
    "LayerPlan",
    "ModelConfig",
    "PlanRecord",
    "build_model",
    "build_plan",
    "get_preset",
    "load_checkpoint",
    "preset_names",
    "read_checkpoint",
    "save_checkpoint",
]

"""Analytic complexity accounting."""

from .analyzer import ComplexityReport, LayerCost, conv_flops, model_complexity

__all__ = ["ComplexityReport", "LayerCost", "conv_flops", "model_complexity"]

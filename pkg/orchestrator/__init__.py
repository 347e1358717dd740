"""Orchestrator modules for the HrSegNet crack segmentation engine."""

from .cli import app as cli_app

__all__ = ["cli_app"]

"""Scripts for the HrSegNet crack segmentation engine."""

from .complexity_tables import ComplexityTables

__all__ = ["ComplexityTables"]

"""Core modules for the HrSegNet engine."""

from .config import settings
from .errors import HrSegError

__all__ = ["settings", "HrSegError"]

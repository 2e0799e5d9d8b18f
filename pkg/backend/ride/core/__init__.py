"""
Core application modules
"""
from .config import settings
from .exceptions import RideError

__all__ = ["settings", "RideError"]

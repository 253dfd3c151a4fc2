"""Temporal aggregation models for long-range video understanding."""

from ._tempagg import *  # noqa: F401,F403
from ._tempagg import __version__  # noqa: F401

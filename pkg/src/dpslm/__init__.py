"""Duration-penalized discrete speech units and their evaluation."""

__version__ = "0.1.0"

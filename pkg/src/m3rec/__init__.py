"""Multi-sequence, multi-task, multi-level sequential recommendation."""

__version__ = "0.1.0"

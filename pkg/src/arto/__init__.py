"""Asynchronous footstep location and timing planning for LIP walkers."""

__version__ = "0.1.0"

"""Learned anisotropic composition of task vectors."""

__version__ = "0.1.0"

"""Insensitivity region discovery and approximation for multimodal objectives."""

__version__ = "1.0.0"

"""Diffuse-interface membrane/cortex model and sharp-interface limit checks."""

__version__ = "0.1.0"

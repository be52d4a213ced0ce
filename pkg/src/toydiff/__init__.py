"""Toy conditional diffusion lab: DDIM inversion, per-step prompt redescription, embedding-shift editing."""

__version__ = "0.1.0"

"""Prototype-gated latent graph ODEs for interacting-particle systems."""

__version__ = "0.1.0"

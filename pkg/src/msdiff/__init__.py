"""Degradation-robust hyperspectral classification: manifold embedding, latent diffusion refinement, frozen-feature classifier."""

__version__ = "0.1.0"

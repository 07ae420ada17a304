"""Manifold Intercept - ball interception over a diffusion-map latent roadmap."""

__version__ = "0.1.0"

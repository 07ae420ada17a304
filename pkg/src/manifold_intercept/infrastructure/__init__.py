"""Infrastructure layer for Manifold Intercept."""

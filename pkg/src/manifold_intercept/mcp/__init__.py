"""MCP layer for Manifold Intercept."""

__all__ = []

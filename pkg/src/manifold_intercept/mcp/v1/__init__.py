"""MCP v1 API."""

__all__ = []

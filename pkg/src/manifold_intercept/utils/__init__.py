"""Utilities for the manifold_intercept package."""

from manifold_intercept.utils.schema_utils import pydantic_to_input_schema

__all__ = [
    "pydantic_to_input_schema",
]

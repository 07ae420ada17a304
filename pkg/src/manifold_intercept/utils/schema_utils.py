"""Utilities for converting Pydantic models to MCP input schemas."""

from typing import Any

from pydantic import BaseModel

# Keywords kept on primitive properties
_PRIMITIVE_KEYS = frozenset(
    {
        "type",
        "description",
        "enum",
        "default",
        "minimum",
        "maximum",
        "exclusiveMinimum",
        "exclusiveMaximum",
        "minItems",
        "maxItems",
        "pattern",
    }
)


def pydantic_to_input_schema(model: type[BaseModel]) -> dict[str, Any]:
    """
    Convert a Pydantic request model into an MCP tool ``inputSchema``.

    ``$ref``/``allOf``/``anyOf`` indirections are inlined, ``Optional`` collapses
    to its non-null branch, and fixed-length tuples become arrays with item bounds.

    Args:
        model: Request model class.

    Returns:
        A JSON Schema object with ``type``, ``properties`` and ``required``.

    Example:
        >>> from pydantic import BaseModel, Field
        >>> class RouteRequest(BaseModel):
        ...     target: int = Field(description="Goal node")
        >>> pydantic_to_input_schema(RouteRequest)["properties"]["target"]["type"]
        'integer'
    """
    schema = model.model_json_schema()
    return _object(schema, schema.get("$defs", {}))


def _deref(node: dict[str, Any], defs: dict[str, Any]) -> dict[str, Any]:
    """Inline ``$ref`` and single-entry ``allOf`` while keeping the outer description."""
    description = node.get("description")
    while True:
        if "$ref" in node:
            target = defs.get(node["$ref"].rsplit("/", 1)[-1], {})
            node = {**target, **{k: v for k, v in node.items() if k != "$ref"}}
        elif "allOf" in node:
            merged: dict[str, Any] = {}
            for part in node["allOf"]:
                merged.update(_deref(part, defs))
            node = {**merged, **{k: v for k, v in node.items() if k != "allOf"}}
        else:
            break
    if description:
        node = {**node, "description": description}
    return node


def _object(schema: dict[str, Any], defs: dict[str, Any]) -> dict[str, Any]:
    result: dict[str, Any] = {
        "type": "object",
        "properties": {
            name: _property(info, defs) for name, info in schema.get("properties", {}).items()
        },
        "required": list(schema.get("required", [])),
    }
    if "description" in schema:
        result["description"] = schema["description"]
    return result


def _property(info: dict[str, Any], defs: dict[str, Any]) -> dict[str, Any]:
    info = _deref(info, defs)

    if "anyOf" in info:
        branch = next((o for o in info["anyOf"] if o.get("type") != "null"), {})
        extra = {k: v for k, v in info.items() if k in ("description", "default")}
        return {**_property(branch, defs), **extra}

    if info.get("type") == "object" or "properties" in info:
        return _object(info, defs)

    if info.get("type") == "array":
        if "prefixItems" in info:
            # Homogeneous tuples (points, vectors) only
            items = _property(info["prefixItems"][0], defs)
            bounds = {"minItems": len(info["prefixItems"]), "maxItems": len(info["prefixItems"])}
        else:
            items = _property(info.get("items", {}), defs)
            bounds = {k: info[k] for k in ("minItems", "maxItems") if k in info}
        result = {"type": "array", "items": items, **bounds}
        if "default" in info:
            result["default"] = info["default"]
    else:
        result = {k: v for k, v in info.items() if k in _PRIMITIVE_KEYS}

    description = info.get("description") or info.get("title")
    if description:
        result["description"] = description
    return result

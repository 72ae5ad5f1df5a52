"""
JSON Schemas for the artifacts fda-ggann reads and writes.
"""
from typing import Any, Dict

from jsonschema import ValidationError, validate

from .exceptions import SchemaError

AST_SCHEMA = {
    "type": "object",
    "properties": {
        "root": {"type": "integer", "minimum": 0},
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "kind": {"type": "string"},
                    "op": {"type": "string"},
                    "symbol": {"type": "string"},
                    "literal": {"type": "string"},
                    "type": {"type": "string"},
                    "line": {"type": "integer", "minimum": 1},
                    "children": {"type": "array", "items": {"type": "integer", "minimum": 0}}
                },
                "required": ["id", "kind", "children"]
            }
        }
    },
    "required": ["root", "nodes"]
}

GRAPH_SCHEMA = {
    "type": "object",
    "properties": {
        "source_id": {"type": "string"},
        "label": {"type": ["integer", "null"], "minimum": 0},
        "num_nodes": {"type": "integer", "minimum": 1},
        "kinds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "edges": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "integer", "minimum": 0},
                "minItems": 3,
                "maxItems": 3
            }
        },
        "external": {"type": "array", "items": {"type": "integer", "minimum": 0}}
    },
    "required": ["source_id", "num_nodes", "kinds", "edges"]
}

CHECKPOINT_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"type": "integer"},
        "config": {"type": "object"},
        "params": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "properties": {
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "data": {"type": "array", "items": {"type": "number"}}
                },
                "required": ["shape", "data"]
            }
        }
    },
    "required": ["version", "config", "params"]
}

MANIFEST_SCHEMA = {
    "type": "object",
    "properties": {
        "generator": {"type": "string"},
        "synth": {"type": "object"},
        "tasks": {"type": "array", "items": {"type": "string"}},
        "programs": {"type": "integer", "minimum": 0}
    },
    "required": ["synth", "tasks"]
}


def validate_document(data: Any, schema: Dict[str, Any], schema_name: str) -> Any:
    """Validate a decoded JSON document, raising SchemaError with the reason."""
    try:
        validate(instance=data, schema=schema)
    except ValidationError as e:
        raise SchemaError(f"Invalid {schema_name} format (Schema Validation Error): {e.message}")
    return data

"""JSON schemas for the command-line configs and a validating loader."""
from __future__ import annotations

import json

import jsonschema

_NUMS = {"type": "array", "items": {"type": "number"}}

NETWORK = {
    "oneOf": [
        {"type": "string", "enum": ["grid4x4", "grid3x3", "grid2x2", "nguyen_dupuis"]},
        {
            "type": "object",
            "required": ["node_count", "arcs"],
            "properties": {
                "node_count": {"type": "integer", "minimum": 1},
                "arcs": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                    "minItems": 2, "maxItems": 2}},
            },
        },
    ]
}

COST = {
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {"enum": ["linear", "bpr"]},
        "phi": _NUMS, "beta": _NUMS, "t0": _NUMS, "capacity": _NUMS, "alpha": _NUMS,
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

DATAGEN = {
    "type": "object",
    "required": ["network", "cost"],
    "properties": {
        "network": NETWORK,
        "cost": COST,
        "pairs": {"oneOf": [{"const": "all"},
                            {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                        "minItems": 2, "maxItems": 2}}]},
        "amount": {"type": "number", "exclusiveMinimum": 0},
        "rel_gap": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

OBSERVATIONS = {
    "type": "object",
    "required": ["network", "family", "known", "observations"],
    "properties": {
        "network": NETWORK,
        "family": {"enum": ["linear_phi", "bpr_alpha"]},
        "known": {"type": "object"},
        "observations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["origin", "dest", "amount", "flow", "potentials"],
                "properties": {"origin": {"type": "integer"}, "dest": {"type": "integer"},
                               "amount": {"type": "number"}, "flow": _NUMS, "potentials": _NUMS},
            },
        },
    },
}

SCENARIO = {
    "type": "object",
    "properties": {
        "edges": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "arcs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "damage": {"type": "number", "minimum": 0},
        "probability": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

SNPP = {
    "type": "object",
    "required": ["network", "cost"],
    "properties": {
        "network": NETWORK,
        "cost": COST,
        "od": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "amount": {"type": "number", "exclusiveMinimum": 0},
        "scenarios": {"oneOf": [{"const": "default"}, {"type": "array", "items": SCENARIO, "minItems": 1}]},
        "max_scenarios": {"type": "integer", "minimum": 1},
        "budget": {"type": "number", "exclusiveMinimum": 0},
        "method": {"enum": ["ph", "extensive"]},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "node_limit": {"type": "integer", "minimum": 1},
        "gap_tol": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

EXPERIMENT = {
    "type": "object",
    "required": ["id", "network", "family"],
    "properties": {
        "id": {"type": "string"},
        "network": {"enum": ["grid4x4", "grid3x3", "grid2x2", "nguyen_dupuis"]},
        "family": {"enum": ["linear", "bpr"]},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "budget": {"type": "number", "exclusiveMinimum": 0},
        "amount": {"type": "number", "exclusiveMinimum": 0},
        "od": {"type": ["array", "null"], "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "scenario_edges": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
        "max_scenarios": {"type": ["integer", "null"], "minimum": 1},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "node_limit": {"type": "integer", "minimum": 1},
        "gap_tol": {"type": "number", "exclusiveMinimum": 0},
        "scale": {"enum": ["paper", "desk"]},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """A config file that does not parse or does not match its schema."""


def load(path, schema: dict) -> dict:
    """Read a JSON file and validate it; raises :class:`ConfigError`."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (path, exc.strerror)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("%s is not valid JSON: %s" % (path, exc)) from exc
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError("%s: %s at %s" % (path, exc.message, where)) from exc
    return data

"""Experiment configuration: a schema-validated JSON document.

One document describes a whole experiment (data generation, solver settings,
evaluation thresholds, output location); each CLI command consumes its
section. Unknown keys are rejected so typos fail loudly, and the effective
config is echoed verbatim into every output directory for reproducibility.
"""

from __future__ import annotations

import json

import jsonschema

from .numerics import ValidationError
from .solver import MATCHERS, MODES

CONFIG_VERSION = 1

_DISTRIBUTION_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"type": "string"},
        "params": {"type": "array"},
    },
    "required": ["kind", "params"],
    "additionalProperties": False,
}

_SOLVER_SCHEMA = {
    "type": "object",
    "properties": {
        "d_c": {"type": "integer", "minimum": 1},
        "mode": {"enum": list(MODES)},
        "matcher": {"enum": list(MATCHERS)},
        "lambda_whiten": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "omega": {"type": "number", "minimum": 0},
        "rho": {"type": "number", "minimum": 0},
        "gamma": {"type": "number", "minimum": 0},
        "lr_q": {"type": "number", "exclusiveMinimum": 0},
        "lr_f": {"type": "number", "exclusiveMinimum": 0},
        "lr_p": {"type": "number", "exclusiveMinimum": 0},
        "lr_clf": {"type": "number", "exclusiveMinimum": 0},
        "clf_decay": {"type": "number", "exclusiveMinimum": 0},
        "batch": {"type": "integer", "minimum": 2},
        "epochs": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "d_p1": {"type": "integer", "minimum": 0},
        "d_p2": {"type": "integer", "minimum": 0},
        "bandwidth": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "disc_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "disc_steps": {"type": "integer", "minimum": 1},
        "disc_input_dropout": {"type": "number", "minimum": 0, "maximum": 0.99},
        "label_smoothing": {"type": "number", "minimum": 0, "maximum": 0.5},
        "init_noise": {"type": "number", "minimum": 0},
        "restarts": {"type": "integer", "minimum": 1},
        "warm_epochs": {"type": "integer", "minimum": 0},
        "warm_slices": {"type": "integer", "minimum": 1},
        "warm_batch": {"type": "integer", "minimum": 2},
        "checkpoint_every": {"type": "integer", "minimum": 1},
        "checkpoint_rows": {"type": "integer", "minimum": 4},
        "select_rows": {"type": "integer", "minimum": 4},
    },
    "additionalProperties": False,
}

_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "seed": {"type": "integer"},
        "output": {"type": "string"},
        "data": {
            "type": "object",
            "properties": {
                "preset": {"type": "string"},
                "n": {"type": "integer", "minimum": 2},
                "d1": {"type": ["integer", "null"], "minimum": 1},
                "d2": {"type": ["integer", "null"], "minimum": 1},
                "homogeneous": {"type": "boolean"},
                "test_fraction": {"type": "number", "minimum": 0, "maximum": 0.5},
                "shuffle": {"type": "boolean"},
                "latent": {
                    "type": "object",
                    "properties": {
                        "shared": {"type": "array", "items": _DISTRIBUTION_SCHEMA},
                        "private1": {"type": "array", "items": _DISTRIBUTION_SCHEMA},
                        "private2": {"type": "array", "items": _DISTRIBUTION_SCHEMA},
                    },
                    "required": ["shared"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "solver": _SOLVER_SCHEMA,
        "anchors": {"type": "integer", "minimum": 0},
        "eval": {
            "type": "object",
            "properties": {
                "thresholds": {
                    "type": "object",
                    "properties": {
                        "leakage": {"type": "number", "minimum": 0},
                        "theta_rel_diff": {"type": "number", "minimum": 0},
                        "pair_match_error": {"type": "number", "minimum": 0},
                        "whitening_residual": {"type": "number", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "retrieval": {
            "type": "object",
            "properties": {
                "k_csls": {"type": "integer", "minimum": 1},
                "ks": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
            "additionalProperties": False,
        },
    },
    "required": ["version"],
    "additionalProperties": False,
}

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "data": {"preset": "thm1a", "n": 100000},
    "solver": {"d_c": 2},
    "eval": {"thresholds": {}},
}


def validate_config(doc: dict) -> dict:
    if "version" not in doc:
        raise ValidationError("config is missing the mandatory 'version' field")
    try:
        jsonschema.validate(doc, _SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {path}: {exc.message}") from exc
    return doc


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return validate_config(doc)


def dump_config(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def merged_with_defaults(doc: dict | None) -> dict:
    """Overlay a (possibly partial) config onto the defaults, then validate."""
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, value in (doc or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return validate_config(merged)

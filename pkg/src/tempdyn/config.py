"""JSON experiment configs: schemas, strict validation, defaults, hashing.

Configs are validated against a published per-command schema with unknown
keys rejected, then filled with defaults.  The resolved config (including a
schema_version field and its own hash) is written next to every command's
outputs so reruns are reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json

import jsonschema

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment config; message names the offending key."""


_MODEL = {
    "type": "object",
    "properties": {
        "input_dim": {"type": "integer", "minimum": 1},
        "hidden_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "num_classes": {"type": "integer", "minimum": 2},
        "activation": {"enum": ["relu", "erf"]},
        "weight_scale": {"type": "number", "exclusiveMinimum": 0},
        "bias_scale": {"type": "number", "minimum": 0},
    },
    "required": ["input_dim", "hidden_widths", "num_classes"],
    "additionalProperties": False,
}

_MODEL_DEFAULTS = {"activation": "relu", "weight_scale": 1.0, "bias_scale": 0.0}

_DATASET = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "generator": {"const": "gaussian_blobs"},
                "train_size": {"type": "integer", "minimum": 1},
                "test_size": {"type": "integer", "minimum": 0},
                "separation": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
            },
            "required": ["generator", "train_size", "separation", "seed"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "generator": {"const": "csv"},
                "path": {"type": "string"},
            },
            "required": ["generator", "path"],
            "additionalProperties": False,
        },
    ]
}

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_POSITIVE_LIST = {"type": "array", "items": _POSITIVE, "minItems": 1}
_SEEDS = {"type": "array", "items": {"type": "integer"}, "minItems": 1}


def _command_schema(properties: dict, required: list) -> dict:
    return {
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
    }


SCHEMAS = {
    "collapse": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "betas": _POSITIVE_LIST,
            "z0_target": {"type": "number", "minimum": 0},
            "eta_tilde": _POSITIVE,
            "horizon_steps": {"type": "integer", "minimum": 1},
            "record_every": {"type": "integer", "minimum": 1},
            "deviation_tol": _POSITIVE,
            "seed": {"type": "integer"},
        },
        ["model", "dataset", "betas", "z0_target", "eta_tilde", "horizon_steps"],
    ),
    "timescales": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "betas": _POSITIVE_LIST,
            "z0_targets": {"type": "array", "items": {"type": "number", "minimum": 0},
                           "minItems": 1},
            "eta_tilde": _POSITIVE,
            "seeds": _SEEDS,
        },
        ["model", "dataset", "betas", "z0_targets", "eta_tilde", "seeds"],
    ),
    "phase_plane": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "betas": _POSITIVE_LIST,
            "c_values": {"type": "array",
                         "items": {"type": "number", "minimum": -1, "maximum": 1},
                         "minItems": 1},
            "seeds": _SEEDS,
            "eta_tilde": _POSITIVE,
            "alpha": _POSITIVE,
            "horizon_steps": {"type": "integer", "minimum": 1},
            "early_steps": {"type": "integer", "minimum": 1},
            "record_every": {"type": "integer", "minimum": 1},
            "deviation_tol": _POSITIVE,
        },
        ["model", "dataset", "betas", "c_values", "seeds", "horizon_steps"],
    ),
    "lr_sweep": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "betas": _POSITIVE_LIST,
            "alphas": _POSITIVE_LIST,
            "seeds": _SEEDS,
            "horizon_steps": {"type": "integer", "minimum": 1},
            "init": {
                "oneOf": [
                    {
                        "type": "object",
                        "properties": {"kind": {"const": "plain"}},
                        "required": ["kind"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "properties": {
                            "kind": {"const": "correlated"},
                            "z0_target": {"type": "number", "minimum": 0},
                        },
                        "required": ["kind", "z0_target"],
                        "additionalProperties": False,
                    },
                ]
            },
        },
        ["model", "dataset", "betas", "alphas", "seeds", "horizon_steps"],
    ),
    "spectra": _command_schema(
        {
            "num_classes": {"type": "integer", "minimum": 2},
            "betas": _POSITIVE_LIST,
            "seed": {"type": "integer"},
            "logit_spread": _POSITIVE,
        },
        ["num_classes", "betas"],
    ),
    "fixedpoint": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "beta": _POSITIVE,
            "lambda_theta": _POSITIVE,
            "regime": {"enum": ["small", "large"]},
            "flow_horizon": _POSITIVE,
            "seed": {"type": "integer"},
        },
        ["model", "dataset", "beta", "lambda_theta", "regime"],
    ),
    "momentum": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "beta": _POSITIVE,
            "gamma_tilde": _POSITIVE,
            "alphas": _POSITIVE_LIST,
            "tau_horizon": _POSITIVE,
            "seed": {"type": "integer"},
            "scheme_table": {
                "type": "object",
                "properties": {
                    "base_rate": _POSITIVE,
                    "betas": _POSITIVE_LIST,
                },
                "required": ["base_rate", "betas"],
                "additionalProperties": False,
            },
        },
        ["model", "dataset", "gamma_tilde", "alphas", "tau_horizon"],
    ),
    "ntk_dump": _command_schema(
        {
            "model": _MODEL,
            "dataset": _DATASET,
            "kind": {"enum": ["empirical", "analytic"]},
            "seed": {"type": "integer"},
            "format": {"enum": ["csv", "npy"]},
        },
        ["model", "dataset", "kind"],
    ),
}

_DEFAULTS = {
    "collapse": {"record_every": 1, "deviation_tol": 0.05, "seed": 0},
    "timescales": {},
    "phase_plane": {"early_steps": 20, "record_every": 1, "deviation_tol": 0.05},
    "lr_sweep": {"init": {"kind": "plain"}},
    "spectra": {"seed": 0, "logit_spread": 1.0},
    "fixedpoint": {"flow_horizon": None, "seed": 0},
    "momentum": {"beta": 1.0, "seed": 0, "scheme_table": None},
    "ntk_dump": {"seed": 0, "format": "csv"},
}


def validate(command: str, config: dict) -> dict:
    """Validate and fill defaults; raises ConfigError naming the bad key."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config key {path!r}: {err.message}")
    resolved = dict(_DEFAULTS[command])
    resolved.update(config)
    resolved = {k: v for k, v in resolved.items() if v is not None}
    if "model" in resolved:
        model = dict(_MODEL_DEFAULTS)
        model.update(resolved["model"])
        resolved["model"] = model
    if "dataset" in resolved and resolved["dataset"].get("generator") == "gaussian_blobs":
        dataset = {"test_size": 0}
        dataset.update(resolved["dataset"])
        resolved["dataset"] = dataset
    if command == "phase_plane":
        if ("eta_tilde" in resolved) == ("alpha" in resolved):
            raise ConfigError("config key 'eta_tilde': give exactly one of eta_tilde / alpha")
        if resolved["early_steps"] % resolved["record_every"] != 0:
            raise ConfigError("config key 'early_steps': must be a multiple of record_every")
    resolved["schema_version"] = SCHEMA_VERSION
    resolved["command"] = command
    return resolved


def config_hash(resolved: dict) -> str:
    """Stable hash of the resolved config (hash field excluded)."""
    pruned = {k: v for k, v in resolved.items() if k != "config_hash"}
    blob = json.dumps(pruned, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load(command: str, path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    resolved = validate(command, raw)
    resolved["config_hash"] = config_hash(resolved)
    return resolved

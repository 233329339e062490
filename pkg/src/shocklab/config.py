"""Experiment configuration: schema validation and defaults."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .linop import BOUNDARY_CLOSURES
from .model import BUILTINS

PIPELINES = ("profile", "spectrum", "damping", "manifold", "evolve", "decay", "conditional")


class ConfigError(ValueError):
    pass


_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

_SYNTH = {
    "type": "object",
    "properties": {"gamma": _POS, "width": _POS, "center": _NUM, "direction": _VEC},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["system", "shock", "discretization", "run"],
    "additionalProperties": False,
    "properties": {
        "system": {
            "type": "object",
            "required": ["name"],
            "properties": {"name": {"enum": sorted(BUILTINS)}, "params": {"type": "object"}},
            "additionalProperties": False,
        },
        "shock": {
            "type": "object",
            "required": ["U_minus"],
            "properties": {
                "U_minus": _VEC,
                "U_plus": _VEC,
                "s": _NUM,
                "fixed": {"type": "object", "patternProperties": {"^[0-9]+$": _NUM},
                          "additionalProperties": False},
                "lax": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "profile": {
            "type": "object",
            "properties": {"L": _POS, "N": {"type": "integer", "minimum": 16}, "residual_tol": _POS},
            "additionalProperties": False,
        },
        "discretization": {
            "type": "object",
            "required": ["L", "N"],
            "properties": {
                "L": _POS,
                "N": {"type": "integer", "minimum": 16},
                "order": {"enum": [2, 4]},
                "bc": {"enum": list(BOUNDARY_CLOSURES)},
            },
            "additionalProperties": False,
        },
        "run": {
            "type": "object",
            "required": ["pipeline"],
            "properties": {
                "pipeline": {"enum": list(PIPELINES)},
                "plots": {"type": "boolean"},
                "synthetic": {"oneOf": [{"type": "null"}, _SYNTH]},
                # spectrum
                "re_cutoff": _POS, "tail_threshold": _POS,
                # damping
                "trials": {"type": "integer", "minimum": 1}, "T": _POS, "eta_tol": _POS,
                # manifold
                "delta": _POS, "amplitudes": {"type": "array", "items": _POS, "minItems": 2},
                "delta_factors": {"type": "array", "items": _POS, "minItems": 2},
                "tol": _POS,
                # evolve
                "mode": {"enum": ["linear", "nonlinear"]},
                "datum": {
                    "type": "object",
                    "properties": {"center": _NUM, "width": _POS, "direction": _VEC, "amplitude": _POS,
                                   "norm": {"enum": ["L1", "L2", "H3", "mixed"]}},
                    "additionalProperties": False,
                },
                "record_dt": _POS, "fit_start": {"type": "number", "minimum": 0}, "cfl": _POS,
                "contamination": {"anyOf": [_POS, {"type": "null"}]}, "band": _POS,
                # conditional
                "eps": _POS, "R": _POS,
                "modes": {"type": "array", "items": {"enum": ["off_manifold", "on_manifold"]}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "sweep": {"type": "array", "items": {"type": "object"}, "minItems": 1},
    },
}

DEFAULTS = {
    "profile": {"L": 20.0, "N": 2048, "residual_tol": 1e-8},
    "discretization": {"order": 2, "bc": "dirichlet_endstate"},
    "run": {
        "plots": True,
        "synthetic": None,
        "re_cutoff": 1e-6, "tail_threshold": 0.01,
        "trials": 100, "T": 1.0, "eta_tol": 0.1,
        "amplitudes": [1e-4, 1e-3, 1e-2], "delta_factors": [1.0, 0.5, 0.25], "tol": 1e-13,
        "mode": "nonlinear",
        "datum": {"center": 0.0, "width": 1.0, "amplitude": 1e-2, "norm": "H3"},
        "record_dt": 0.25, "fit_start": 5.0, "cfl": 0.5, "contamination": 1e-6, "band": 0.15,
        "eps": 1e-4, "modes": ["off_manifold", "on_manifold"],
    },
    "seed": 0,
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> dict:
    """Schema-check ``cfg`` and return it with defaults filled in."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    full = deep_merge(DEFAULTS, cfg)
    if full["run"]["pipeline"] == "decay":
        full["run"]["pipeline"] = "evolve"
    n_state = len(full["shock"]["U_minus"])
    if "U_plus" in full["shock"] and len(full["shock"]["U_plus"]) != n_state:
        raise ConfigError("shock/U_plus: length differs from U_minus")
    if "U_plus" not in full["shock"] and "s" not in full["shock"] and not full["shock"].get("fixed"):
        raise ConfigError("shock: give U_plus, s or a fixed component of U_plus")
    d = full["run"].get("datum", {}).get("direction")
    if d is not None and len(d) != n_state:
        raise ConfigError("run/datum/direction: length differs from the state dimension")
    for entry in full.get("sweep", []):
        if "sweep" in entry:
            raise ConfigError("sweep entries cannot nest sweeps")
        sub = deep_merge({k: v for k, v in cfg.items() if k != "sweep"}, entry)
        try:
            jsonschema.validate(sub, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"sweep entry: {where}: {exc.message}") from None
    return full


def load(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return validate(cfg)


def sweep_configs(full: dict):
    """One fully resolved config per sweep entry (or the config itself)."""
    base = {k: v for k, v in full.items() if k != "sweep"}
    if not full.get("sweep"):
        return [base]
    return [validate(deep_merge(base, entry)) for entry in full["sweep"]]

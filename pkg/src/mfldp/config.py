"""Experiment configuration: loading (TOML or JSON), schema validation and
model construction."""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError
from .gibbs import GibbsModel, curie_weiss, quadratic_product_model
from .potentials import confinement_from_config, potential_from_config
from .spaces import EuclideanSpace, FiniteSpace, finite_reference, grid_reference

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("sample", "minimize", "fixed-point", "rate", "zn", "verify", "converge",
         "wasserstein")

_NLIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "strict": {"type": "boolean"},
        "n": {"anyOf": [{"type": "integer", "minimum": 1}, _NLIST]},
        "model": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["curie-weiss", "quadratic-product"]},
                "beta": {"type": "number"},
                "theta": {"type": "number"},
                "space": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["finite", "euclidean"]},
                        "labels": {"type": "array", "minItems": 1},
                        "rho": {"type": "array"},
                        "dim": {"type": "integer", "minimum": 1},
                        "box": {"type": "array", "items": {"type": "number"},
                                "minItems": 2, "maxItems": 2},
                        "cells": {"type": "integer", "minimum": 2},
                    },
                },
                "alpha": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "confinement": {"type": "object", "required": ["family"]},
                "interactions": {"type": "array",
                                 "items": {"type": "object", "required": ["family"]}},
            },
        },
        "sampler": {
            "type": "object",
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "burn_in": {"type": "integer", "minimum": 0},
                "thinning": {"type": "integer", "minimum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "format": {"enum": ["csv", "binary"]},
                "dynamics": {"enum": ["metropolis", "langevin"]},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "force": {"type": "boolean"},
            },
        },
        "solver": {
            "type": "object",
            "properties": {
                "method": {"enum": ["auto", "grid-scan", "parametric-1d", "fixed-point"]},
                "mesh": {"type": "number", "exclusiveMinimum": 0},
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "start_magnetization": {"type": "number", "minimum": -1, "maximum": 1},
            },
        },
        "rate": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["exact", "monte-carlo"]},
                "event": {
                    "type": "object",
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["whole", "mass_at_most", "mass_at_least",
                                          "magnetization_at_least"]},
                        "index": {"type": "integer", "minimum": 0},
                        "threshold": {"type": "number"},
                    },
                },
                "replicas": {"type": "integer", "minimum": 1000},
                "chains": {"type": "integer", "minimum": 1},
                "burn_in_sweeps": {"type": "integer", "minimum": 0},
            },
        },
        "zn": {
            "type": "object",
            "properties": {
                "method": {"enum": ["exact", "estimate"]},
                "schedule_points": {"type": "integer", "minimum": 10},
                "replicas": {"type": "integer", "minimum": 2},
                "sweeps": {"type": "integer", "minimum": 1},
                "burn_in_sweeps": {"type": "integer", "minimum": 0},
            },
        },
        "verify": {
            "type": "object",
            "properties": {
                "instances": {"type": "integer", "minimum": 1},
                "max_states": {"type": "integer", "minimum": 2, "maximum": 3},
                "max_n": {"type": "integer", "minimum": 2, "maximum": 5},
            },
        },
        "converge": {
            "type": "object",
            "properties": {
                "replicas": {"type": "integer", "minimum": 1},
                "p": {"type": "number", "minimum": 1},
                "burn_in_sweeps": {"type": "integer", "minimum": 0},
                "target": {"enum": ["minimizer", "gaussian-grid"]},
            },
        },
        "wasserstein": {
            "type": "object",
            "required": ["mu", "nu"],
            "properties": {
                "mu": {"type": "string"},
                "nu": {"type": "string"},
                "p": {"type": "number", "minimum": 1},
                "plan": {"type": "boolean"},
                "method": {"enum": ["auto", "exact", "quantile"]},
            },
        },
    },
}


def _check_schema(cfg: dict):
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, list(err.absolute_path))


def load_config(path) -> dict:
    """Read a TOML or JSON file and validate it; errors carry the field path."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(text)
        else:
            cfg = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a table/object")
    validate_config(cfg, base=path.parent)
    return cfg


def validate_config(cfg: dict, base=None):
    _check_schema(cfg)
    kind = cfg["kind"]
    if kind not in ("verify", "wasserstein") and "model" not in cfg:
        raise ConfigError("missing required field 'model'", ["model"])
    if "model" in cfg:
        build_model(cfg["model"])
    if kind == "wasserstein":
        for key in ("mu", "nu"):
            p = Path(cfg["wasserstein"][key])
            if base is not None and not p.is_absolute():
                p = Path(base) / p
            if not p.exists():
                raise ConfigError(f"file {str(p)!r} does not exist", ["wasserstein", key])


def build_model(mcfg: dict) -> GibbsModel:
    """Model from its config table; ConfigError on any invalid field."""
    preset = mcfg.get("preset")
    if preset == "curie-weiss":
        if "beta" not in mcfg:
            raise ConfigError("missing required field 'beta'", ["model"])
        return curie_weiss(mcfg["beta"])
    if preset == "quadratic-product":
        if "theta" not in mcfg:
            raise ConfigError("missing required field 'theta'", ["model"])
        sp = mcfg.get("space", {})
        return quadratic_product_model(mcfg["theta"], tuple(sp.get("box", (-8.0, 8.0))),
                                       sp.get("cells", 1001))
    if "space" not in mcfg:
        raise ConfigError("missing required field 'space'", ["model"])
    scfg = mcfg["space"]
    interactions = []
    for i, icfg in enumerate(mcfg.get("interactions", [])):
        interactions.append(potential_from_config(icfg, ["model", "interactions", i]))
    try:
        if scfg["kind"] == "finite":
            if "labels" not in scfg:
                raise ConfigError("missing required field 'labels'", ["model", "space"])
            space = FiniteSpace(scfg["labels"], scfg.get("rho"))
            weights = mcfg.get("alpha", [1.0] * space.size)
            if len(weights) != space.size:
                raise ConfigError("alpha must have one weight per label", ["model", "alpha"])
            weights = np.asarray(weights, float) / float(np.sum(weights))
            return GibbsModel(space, finite_reference(space, weights), tuple(interactions))
        space = EuclideanSpace(scfg.get("dim", 1), tuple(scfg.get("box", (-8.0, 8.0))),
                               scfg.get("cells", 1001))
        conf = confinement_from_config(mcfg.get("confinement", {"family": "quadratic"}),
                                       ["model", "confinement"])
        return GibbsModel(space, grid_reference(space, conf), tuple(interactions), conf)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), ["model"]) from None


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def n_list(cfg: dict, default) -> list:
    n = cfg.get("n", default)
    return [n] if isinstance(n, int) else list(n)

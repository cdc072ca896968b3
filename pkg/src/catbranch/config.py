"""JSON config schemas for every experiment subcommand and their parsing into
simulation objects."""

from __future__ import annotations

import copy
from typing import Any

import jsonschema
import numpy as np

from .lattice import Lattice
from .offspring import OffspringLawError, law_from_spec
from .particles import DEFAULT_MAX_EVENTS, ParticleState


class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{path or '<root>'}: {msg}" for path, msg in self.errors))

    def to_json(self) -> dict:
        return {"error": "config", "fields": [{"path": p, "message": m} for p, m in self.errors]}


_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}
_REPLICATES = {"type": "integer", "minimum": 1}
_SITE = {"type": "array", "items": {"type": "integer"}, "minItems": 1}
_LAW = {
    "oneOf": [
        {"type": "string"},
        {"type": "array", "items": _NONNEG, "minItems": 1},
        {"type": "object", "properties": {"trinomial": {"type": "number", "minimum": 0, "maximum": 1}},
         "required": ["trinomial"], "additionalProperties": False},
    ]
}
_LATTICE = {
    "type": "object",
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "half_width": {"type": ["integer", "null"], "minimum": 1},
    },
    "required": ["dimension"],
    "additionalProperties": False,
}
_TORUS = copy.deepcopy(_LATTICE)
_TORUS["required"] = ["dimension", "half_width"]
_TORUS["properties"]["half_width"] = {"type": "integer", "minimum": 1}
_COUNTS = {"type": "array", "items": {"type": "array", "prefixItems": [_SITE, _NONNEG_INT], "minItems": 2, "maxItems": 2}}
_PARTICLE_INITIAL = {
    "oneOf": [
        {"type": "object", "properties": {"kind": {"const": "constant"}, "xi": _NONNEG_INT, "eta": _NONNEG_INT},
         "required": ["kind", "xi", "eta"], "additionalProperties": False},
        {"type": "object", "properties": {"kind": {"const": "point"}, "xi": _NONNEG_INT, "eta": _NONNEG_INT, "site": _SITE},
         "required": ["kind", "xi", "eta"], "additionalProperties": False},
        {"type": "object", "properties": {"kind": {"const": "explicit"}, "xi": _COUNTS, "eta": _COUNTS},
         "required": ["kind", "xi", "eta"], "additionalProperties": False},
    ]
}
_FIELD = {"oneOf": [_NONNEG, {"type": "array", "items": _NONNEG, "minItems": 1}]}
_COMMON = {"replicates": _REPLICATES, "seed": _SEED, "workers": {"type": ["integer", "null"], "minimum": 1}}


def _schema(properties: dict, required: list) -> dict:
    props = dict(_COMMON)
    props.update(properties)
    return {"type": "object", "properties": props, "required": required, "additionalProperties": False}


SCHEMAS: dict[str, dict] = {
    "simulate": _schema(
        {
            "lattice": _LATTICE, "kappa": _POS, "gamma": _POS, "law": _LAW,
            "initial": _PARTICLE_INITIAL, "horizon": _NONNEG,
            "record_events": {"type": "boolean"},
            "max_events": {"type": "integer", "minimum": 1},
        },
        ["lattice", "kappa", "gamma", "law", "initial", "horizon", "replicates", "seed"],
    ),
    "simulate-sde": _schema(
        {
            "mode": {"enum": ["torus", "limit"]},
            "lattice": _TORUS, "kappa": _POS, "gamma_tilde": _NONNEG,
            "u0": _FIELD, "v0": _FIELD, "t": _NONNEG, "dt": _POS,
        },
        ["mode", "gamma_tilde", "u0", "v0", "t", "replicates", "seed"],
    ),
    "kernels": {
        "type": "object",
        "properties": {
            "lattice": _TORUS, "kappa": _POS,
            "times": {"type": "array", "items": _NONNEG, "minItems": 1},
            "quantities": {"type": "array", "items": {"enum": ["p", "g"]}, "minItems": 1},
        },
        "required": ["lattice", "times"],
        "additionalProperties": False,
    },
    "moments-check": _schema(
        {
            "lattice": _TORUS, "kappa": _POS, "gamma": _POS, "law": _LAW,
            "theta1": _NONNEG_INT, "theta2": _NONNEG_INT,
            "times": {"type": "array", "items": _NONNEG, "minItems": 1},
            "x": _SITE, "y": _SITE, "z_threshold": _POS,
        },
        ["lattice", "gamma", "law", "theta1", "theta2", "times", "replicates", "seed"],
    ),
    "coexistence": _schema(
        {
            "dimension": {"type": "integer", "minimum": 1}, "kappa": _POS, "gamma": _POS, "law": _LAW,
            "initial": _PARTICLE_INITIAL,
            "horizons": {"type": "array", "items": _POS, "minItems": 1},
            "max_events": {"type": "integer", "minimum": 1},
        },
        ["dimension", "gamma", "law", "horizons", "replicates", "seed"],
    ),
    "fss": _schema(
        {
            "d": {"type": "integer", "minimum": 1},
            "n_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            "T": _POS, "theta1": _NONNEG_INT, "theta2": _NONNEG_INT, "gamma": _POS, "law": _LAW,
            "kappa": _POS,
            "grid": {"type": "array", "items": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2}, "minItems": 1},
            "limit_replicates": _REPLICATES, "dt": _POS, "gap_tolerance": _NONNEG,
            "allow_unproven": {"type": "boolean"},
        },
        ["d", "n_values", "T", "theta1", "theta2", "gamma", "law", "replicates", "seed"],
    ),
    "duality-check": _schema(
        {
            "lattice": _TORUS, "kappa": _POS, "gamma_tilde": _NONNEG,
            "u0": _FIELD, "v0": _FIELD, "ut0": _FIELD, "vt0": _FIELD,
            "t": _NONNEG, "dt": _POS, "bias_allowance": _NONNEG,
        },
        ["lattice", "gamma_tilde", "u0", "v0", "ut0", "vt0", "t", "replicates", "seed"],
    ),
}

DEFAULTS: dict[str, dict] = {
    "simulate": {"record_events": False, "max_events": DEFAULT_MAX_EVENTS, "workers": None},
    "simulate-sde": {"kappa": 1.0, "dt": 1e-3, "workers": None},
    "kernels": {"kappa": 1.0, "quantities": ["p", "g"]},
    "moments-check": {"kappa": 1.0, "z_threshold": 3.0, "workers": None},
    "coexistence": {"kappa": 1.0, "initial": {"kind": "point", "xi": 1, "eta": 1},
                    "max_events": DEFAULT_MAX_EVENTS, "workers": None},
    "fss": {"kappa": 1.0, "limit_replicates": 100_000, "dt": 1e-3, "gap_tolerance": 0.05,
            "allow_unproven": False, "grid": [[a, b] for a in (0.0, 0.5, 1.0) for b in (0.0, 0.5, 1.0)],
            "workers": None},
    "duality-check": {"kappa": 1.0, "dt": 1e-3, "bias_allowance": 0.01},
}


def validate(subcommand: str, raw: Any) -> dict:
    """Schema-check ``raw`` and return a copy with defaults filled in."""
    if subcommand not in SCHEMAS:
        raise ConfigError([("", f"unknown subcommand {subcommand!r}")])
    validator = jsonschema.Draft202012Validator(SCHEMAS[subcommand])
    errors = sorted(validator.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise ConfigError([("/".join(str(p) for p in e.absolute_path), e.message) for e in errors])
    cfg = copy.deepcopy(DEFAULTS.get(subcommand, {}))
    cfg.update(copy.deepcopy(raw))
    _semantic_checks(subcommand, cfg)
    return cfg


def _semantic_checks(subcommand: str, cfg: dict) -> None:
    errors = []
    if "law" in cfg:
        try:
            law_from_spec(cfg["law"])
        except OffspringLawError as exc:
            errors.append(("law", str(exc)))
    lattice = cfg.get("lattice")
    if lattice is not None:
        for key in ("x", "y"):
            if key in cfg and len(cfg[key]) != lattice["dimension"]:
                errors.append((key, f"site needs {lattice['dimension']} coordinates"))
        initial = cfg.get("initial")
        if initial and initial["kind"] == "constant" and lattice.get("half_width") is None:
            errors.append(("initial", "constant initial fields need a torus (set lattice.half_width)"))
    if subcommand in ("simulate-sde", "duality-check") and cfg.get("mode", "torus") == "torus":
        if "lattice" not in cfg:
            errors.append(("lattice", "torus mode needs a lattice"))
        else:
            size = (2 * cfg["lattice"]["half_width"] + 1) ** cfg["lattice"]["dimension"]
            for key in ("u0", "v0", "ut0", "vt0"):
                if isinstance(cfg.get(key), list) and len(cfg[key]) != size:
                    errors.append((key, f"field needs {size} entries, got {len(cfg[key])}"))
    if subcommand == "simulate-sde" and cfg.get("mode") == "limit":
        for key in ("u0", "v0"):
            if isinstance(cfg.get(key), list):
                errors.append((key, "limit mode takes scalar initial values"))
    if errors:
        raise ConfigError(errors)


def lattice_from(cfg: dict) -> Lattice:
    return Lattice(cfg["dimension"], cfg.get("half_width"))


def initial_from(spec: dict, lattice: Lattice) -> ParticleState:
    kind = spec["kind"]
    if kind == "constant":
        return ParticleState.constant(lattice, spec["xi"], spec["eta"])
    if kind == "point":
        return ParticleState.point(lattice, spec["xi"], spec["eta"], spec.get("site"))
    xi = {tuple(site): c for site, c in spec["xi"]}
    eta = {tuple(site): c for site, c in spec["eta"]}
    for x in list(xi) + list(eta):
        if not lattice.contains(x):
            raise ConfigError([("initial", f"site {list(x)} is not in the lattice")])
    return ParticleState(xi, eta)


def field_from(value, size: int) -> np.ndarray:
    if isinstance(value, list):
        return np.asarray(value, dtype=float)
    return np.full(size, float(value))

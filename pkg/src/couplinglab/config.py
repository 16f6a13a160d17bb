"""Experiment configuration: TOML files with one level of tables, validated against a JSON schema."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("sep", "asep", "voter", "contact", "glauber", "gibbs1d", "rw", "bounds")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_prob = {"type": "number", "minimum": 0, "maximum": 1}


def _table(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _table(
    {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": _count,
        "lattice": _table({"d": _count, "L": {"type": "integer", "minimum": 3}}),
        "process": _table(
            {
                "kernel": {"enum": ["nearest_neighbor"]},
                "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "p": _prob,
                "lam": _pos,
                "beta": _num,
                "kappa": {"anyOf": [{"type": "number", "exclusiveMinimum": 2}, {"const": "inf"}]},
                "truncation_radius": _count,
                "tolerance": _pos,
            }
        ),
        "function": _table(
            {
                "sites": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}, "minItems": 1}},
                "values": {"type": "array", "items": _num, "minItems": 1},
            },
            ("sites", "values"),
        ),
        "time": _table({"grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}}, ("grid",)),
        "replicas": _table(
            {"n": _count, "n_outer": {"type": "integer", "minimum": 4}, "n_inner": {"type": "integer", "minimum": 2},
             "n_env": _count, "n_rep": {"type": "integer", "minimum": 2}, "n_runs": _count, "n_samples": _count}
        ),
        "bounds": _table(
            {"c": _pos, "u": {"type": "number", "minimum": 1}, "v": {"type": "number", "minimum": 1},
             "p": {"type": "number", "minimum": 1}, "a": {"type": "number", "minimum": 0}, "kappa": _pos,
             "psi": {"type": "number", "minimum": 0}, "df": {"type": "number", "minimum": 0}, "size": _count,
             "alpha": {"type": "number", "minimum": 0.5}, "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
             "d_norm": {"type": "number", "minimum": 0}, "prefactor": _pos, "d": _count, "growth": _pos}
        ),
        "probe": _table(
            {"ks": {"type": "array", "items": {"type": "integer"}}, "tol": _pos, "a": {"type": "number", "minimum": 0},
             "N": _count, "j_max": _count, "horizon": _count, "q": {"type": "number", "exclusiveMinimum": 2},
             "m_max": _count, "tv_N": {"type": "integer", "minimum": 1, "maximum": 12}, "window": {"type": "integer", "minimum": 3}}
        ),
        "output": _table({"dir": {"type": "string"}}),
    },
    ("kind",),
)

DEFAULTS: dict[str, dict] = {
    "rw": {
        "lattice": {"d": 1, "L": 512},
        "process": {"kernel": "nearest_neighbor"},
        "time": {"grid": [0.5, 1.0, 2.0, 4.0, 8.0]},
        "probe": {"ks": [0, 1, 2], "tol": 1e-13},
    },
    "bounds": {
        "bounds": {"c": 0.125, "u": 2.0, "v": 1.0, "p": 2.0, "a": 1.0, "kappa": 1.0, "psi": 1.0, "df": 1.0,
                   "size": 64, "alpha": 1.0, "eps": 0.5, "d_norm": 1.0, "prefactor": 1.0, "d": 1, "growth": 1.0},
        "time": {"grid": [16.0]},
    },
    "sep": {
        "lattice": {"d": 1, "L": 64},
        "process": {"kernel": "nearest_neighbor", "rho": 0.5},
        "function": {"sites": [[0]], "values": [0.0, 1.0]},
        "time": {"grid": [1.0, 4.0]},
        "replicas": {"n": 4000, "n_outer": 2000, "n_inner": 8},
        "bounds": {"c": 0.125},
        "probe": {"ks": [0, 1, 2, 3], "a": 0.3},
    },
    "asep": {
        "lattice": {"d": 1, "L": 256},
        "process": {"rho": 0.3, "p": 1.0},
        "function": {"sites": [[0]], "values": [0.0, 1.0]},
        "time": {"grid": [10.0]},
        "replicas": {"n": 2000, "n_env": 200, "n_rep": 8, "n_outer": 400, "n_inner": 8},
        "probe": {"ks": [-2, -1, 0, 1, 2, 3, 4, 5, 6]},
    },
    "voter": {
        "lattice": {"d": 1, "L": 64},
        "process": {"kernel": "nearest_neighbor", "rho": 0.5},
        "time": {"grid": [1.0, 4.0]},
        "replicas": {"n": 4000},
    },
    "contact": {
        "lattice": {"d": 1, "L": 128},
        "process": {"lam": 0.8},
        "time": {"grid": [2.0, 4.0, 6.0, 8.0, 10.0]},
        "replicas": {"n": 4000},
    },
    "glauber": {
        "lattice": {"d": 1, "L": 64},
        "process": {"beta": 0.2, "kappa": 5.0, "truncation_radius": 4, "rho": 0.5},
        "time": {"grid": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]},
        "replicas": {"n": 4000},
        "probe": {"window": 64, "ks": [-3, -2, -1, 0, 1, 2, 3]},
    },
    "gibbs1d": {
        "process": {"beta": 0.2, "kappa": 5.0, "truncation_radius": 3},
        "replicas": {"n": 4, "n_runs": 2000, "n_samples": 1000000},
        "probe": {"N": 24, "j_max": 8, "horizon": 400, "q": 2.5, "m_max": 6, "tv_N": 6},
    },
}

HASH_EXCLUDED = ("workers", "output")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in problems))
        self.problems = problems


def load(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def validate(cfg: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise ConfigError([f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors])


def effective(cfg: dict, kind: str | None = None) -> dict:
    """Validate ``cfg`` and fill per-kind defaults table by table."""
    cfg = copy.deepcopy(cfg)
    if kind is not None:
        if cfg.get("kind", kind) != kind:
            raise ConfigError([f"kind: config declares {cfg['kind']!r} but {kind!r} was requested"])
        cfg["kind"] = kind
    validate(cfg)
    out = copy.deepcopy(DEFAULTS[cfg["kind"]])
    for key, val in cfg.items():
        if isinstance(val, dict):
            out.setdefault(key, {}).update(val)
        else:
            out[key] = val
    out.setdefault("seed", 0)
    validate(out)
    return out


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON of everything that affects the numbers."""
    core = {k: v for k, v in cfg.items() if k not in HASH_EXCLUDED}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()

"""Flat ``section.key = value`` experiment files.

One experiment per file.  Values are JSON literals (numbers, lists, strings,
``true``/``false``); a value that is not valid JSON is read as a bare string.
Blank lines and lines starting with ``#`` are ignored.

Example::

    market.x0 = 1.0
    market.horizon = 1.0
    market.n_steps = 252
    market.r = 0.05
    market.b = [0.10]
    market.sigma = [[0.2]]
    constraint.kind = orthant
    utility.kind = power
    utility.beta = 0.5
    run.n_paths = 10000
    run.seed = 1
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constraints import Box, ConstraintSet, FullSpace, Orthant, Polyhedron, PolyhedralCone
from .market import MarketModel
from .utility import UtilityFunction, utility_from_dict

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "dump_config",
    "SCHEMA",
]


class ConfigError(ValueError):
    pass


SCHEMA = {
    "market": {"n_assets", "horizon", "x0", "n_steps", "grid", "r", "b", "sigma"},
    "constraint": {"kind", "lower", "upper", "G", "A", "c"},
    "utility": {"kind", "beta"},
    "run": {"n_paths", "seed", "tol", "membership_tol", "bsde_tol", "perturb_pi", "candidates",
            "oracle_inner", "oracle_outer"},
}
REQUIRED = {
    "market": {"r", "b", "sigma"},
    "constraint": {"kind"},
    "utility": {"kind"},
}
RUN_DEFAULTS = {
    "n_paths": 10_000,
    "seed": 0,
    "tol": 1e-9,
    "membership_tol": 1e-8,
    "bsde_tol": 2.0,
    "perturb_pi": 0.0,
    "candidates": ["zero", "merton", "solver"],
    "oracle_inner": 0,
    "oracle_outer": 1000,
}


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text: str) -> dict:
    """Parse file text into ``{section: {key: value}}``, rejecting unknown keys."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        section, dot, name = key.partition(".")
        if not dot or section not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown section in {key!r}")
        if name not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        block = out.setdefault(section, {})
        if name in block:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        block[name] = _value(val.strip())
    for section, keys in REQUIRED.items():
        if section not in out:
            raise ConfigError(f"missing block {section!r}")
        missing = keys - out[section].keys()
        if missing:
            raise ConfigError(f"missing keys in {section!r}: {sorted(missing)}")
    return out


def dump_config(data: dict) -> str:
    lines = []
    for section in SCHEMA:
        for key, val in data.get(section, {}).items():
            lines.append(f"{section}.{key} = {json.dumps(val)}")
    return "\n".join(lines) + "\n"


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


@dataclass
class ExperimentConfig:
    market: MarketModel
    constraint: ConstraintSet
    utility: UtilityFunction
    run: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls._from_dict(d)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def _from_dict(cls, d: dict) -> "ExperimentConfig":
        mk = d["market"]
        n = int(mk.get("n_assets", np.size(mk["b"]) if np.ndim(mk["b"]) <= 1 else np.shape(mk["b"])[-1]))
        if "grid" in mk:
            grid = np.asarray(mk["grid"], dtype=float)
        else:
            grid = np.linspace(0.0, float(mk.get("horizon", 1.0)), int(mk.get("n_steps", 252)) + 1)
        sigma = np.asarray(mk["sigma"], dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        b = np.atleast_1d(np.asarray(mk["b"], dtype=float))
        market = MarketModel(n, float(mk.get("x0", 1.0)), grid, mk["r"], b, sigma)
        constraint = constraint_from_dict(d["constraint"], n)
        utility = utility_from_dict(d["utility"])
        run = dict(RUN_DEFAULTS)
        run.update(d.get("run", {}))
        for key in ("n_paths", "seed", "oracle_inner", "oracle_outer"):
            if not isinstance(run[key], int) or isinstance(run[key], bool) or run[key] < 0:
                raise ConfigError(f"run.{key} must be a non-negative integer")
        if run["n_paths"] < 2:
            raise ConfigError("run.n_paths must be at least 2")
        for key in ("tol", "membership_tol", "bsde_tol", "perturb_pi"):
            if not isinstance(run[key], (int, float)) or isinstance(run[key], bool):
                raise ConfigError(f"run.{key} must be a number")
        if not isinstance(run["candidates"], list):
            raise ConfigError("run.candidates must be a list")
        return cls(market, constraint, utility, run, d)


def constraint_from_dict(d: dict, n: int) -> ConstraintSet:
    kind = str(d["kind"]).lower()
    extra = set(d) - {"kind"}
    allowed = {"full": set(), "orthant": set(), "box": {"lower", "upper"},
               "polyhedral_cone": {"G"}, "polyhedron": {"A", "c"}}
    if kind not in allowed:
        raise ConfigError(f"unknown constraint kind {kind!r}")
    if extra - allowed[kind]:
        raise ConfigError(f"keys {sorted(extra - allowed[kind])} do not apply to {kind}")
    if kind == "full":
        return FullSpace(n)
    if kind == "orthant":
        return Orthant(n)
    if kind == "box":
        def bound(v, default):
            # JSON has no infinity: null or the strings "inf"/"-inf" stand for it
            v = default if v is None else v
            v = np.broadcast_to(np.asarray(v, dtype=object), (n,))
            try:
                return np.array([default if x is None else float(x) for x in v], dtype=float)
            except (TypeError, ValueError):
                raise ConfigError("box bounds must be numbers, null or 'inf'") from None
        return Box(bound(d.get("lower"), -np.inf), bound(d.get("upper"), np.inf))
    if kind == "polyhedral_cone":
        return PolyhedralCone(np.asarray(d["G"], dtype=float))
    return Polyhedron(np.asarray(d["A"], dtype=float), np.asarray(d["c"], dtype=float))

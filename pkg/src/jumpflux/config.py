"""Experiment configuration files.

A config is a YAML document whose top-level sections mirror the modules:
``experiment``, ``randfield``, ``jumpfield``, ``mesh``, ``solver``,
``initial``, ``sweep`` and ``sampling``.  Unknown sections or keys are errors.
Shipped configurations for every study live in ``jumpflux/configs`` and are
addressed by their file stem.
"""

from __future__ import annotations

import copy
import math
from importlib import resources
from pathlib import Path

import yaml

from jumpflux.experiments import ExperimentSpec

SCHEMA: dict[str, dict] = {
    "experiment": {"id": "experiment", "kind": "convergence", "seed": 0, "samples": 1,
                   "threads": None, "norms": ["L1", "L2"]},
    "randfield": {"nu": None, "variance": None, "correlation_length": None, "n_quad": 512,
                  "n_terms": None},
    "jumpfield": {"preset": "constant", "params": {}},
    "mesh": {"strategies": ["equidistant", "jump_adapted", "wave_cell"], "levels": [64, 128, 256, 512],
             "reference_factor": 4, "reference_strategy": "wave_cell", "strategy": "jump_adapted",
             "n_cells": 256},
    "solver": {"integrators": ["forward_euler"], "integrator": "forward_euler", "cfl_number": 0.9,
               "t_end": 1.0, "implicit_dt": None, "n_outputs": 1},
    "initial": {"kind": "sine", "kappa": 0.3, "left": 1.0, "right": 0.0, "x0": 0.5, "value": 1.0},
    "sweep": {"axis": None, "values": None, "mode": "convergence"},
    "sampling": {"count": 2, "grid_points": 2001},
}

KINDS = ("solve", "convergence", "time_to_error", "sweep", "sample_coefficient")


class ConfigError(ValueError):
    pass


def _yaml_load(text: str):
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    return data


def shipped_configs() -> list[str]:
    folder = resources.files("jumpflux") / "configs"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def load_shipped(name: str) -> dict:
    path = resources.files("jumpflux") / "configs" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"no shipped config named {name!r}; available: {shipped_configs()}")
    return resolve(_yaml_load(path.read_text()))


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return resolve(_yaml_load(path.read_text()))


def resolve(raw: dict) -> dict:
    """Fill defaults and reject unknown sections and keys."""
    cfg = copy.deepcopy(SCHEMA)
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            cfg[section][key] = value
    if cfg["experiment"]["kind"] not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}")
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {dotted}")
        cfg[section][key] = yaml.safe_load(value)
    return cfg


def _number(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity", ".inf"):
        return math.inf
    return v


def preset_params(cfg: dict) -> dict:
    params = dict(cfg["jumpfield"]["params"] or {})
    for key in ("nu", "variance", "correlation_length"):
        if cfg["randfield"][key] is not None:
            params[key] = float(_number(cfg["randfield"][key]))
    if cfg["jumpfield"]["preset"] in ("alternating_exponential", "poisson_sqexp", "lognormal"):
        params.setdefault("n_quad", int(cfg["randfield"]["n_quad"]))
        if cfg["randfield"]["n_terms"] is not None:
            params.setdefault("n_terms", int(cfg["randfield"]["n_terms"]))
    return params


def initial_spec(cfg: dict) -> dict:
    init = cfg["initial"]
    kind = init["kind"]
    keys = {"sine": ("kappa",), "riemann": ("left", "right", "x0"), "constant": ("value",)}
    if kind not in keys:
        raise ConfigError(f"unknown initial kind {kind!r}")
    return {"kind": kind, **{k: float(init[k]) for k in keys[kind]}}


def experiment_spec(cfg: dict) -> ExperimentSpec:
    exp, mesh, solver = cfg["experiment"], cfg["mesh"], cfg["solver"]
    try:
        return ExperimentSpec(
            name=str(exp["id"]),
            preset=cfg["jumpfield"]["preset"],
            preset_params=preset_params(cfg),
            initial=initial_spec(cfg),
            strategies=tuple(mesh["strategies"]),
            levels=tuple(mesh["levels"]),
            reference_factor=int(mesh["reference_factor"]),
            reference_strategy=mesh["reference_strategy"],
            integrators=tuple(solver["integrators"]),
            samples=int(exp["samples"]),
            seed=int(exp["seed"]),
            norms=tuple(exp["norms"]),
            t_end=float(solver["t_end"]),
            cfl_number=float(solver["cfl_number"]),
            implicit_dt=None if solver["implicit_dt"] is None else float(solver["implicit_dt"]),
            threads=exp["threads"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def sweep_values(cfg: dict):
    values = cfg["sweep"]["values"]
    return None if values is None else [_number(v) for v in values]

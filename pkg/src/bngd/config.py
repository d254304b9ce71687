"""Experiment configuration: JSON schema, defaults and resolution.

A config file is a JSON object; anything it omits is filled from the
defaults of its experiment kind, and CLI flags override both.  The fully
resolved config is what gets echoed next to the outputs, and re-running
from the echo reproduces them.

Grids (``eps``, ``eps_a``, ``dims``...) are either explicit lists or
``{"logspace": [lo_exp, hi_exp, n], "scale": s}`` /
``{"linspace": [lo, hi, n]}``.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .model import DomainError, ProblemInstance, SpectrumSpec, make_instance, random_sphere
from .rng import substream

SCHEMA_VERSION = 1
KINDS = ("single_run", "sweep", "dim_scan", "omega", "scaling_check", "verify")
COMMAND_KIND = {
    "run": "single_run",
    "sweep": "sweep",
    "dim-scan": "dim_scan",
    "omega": "omega",
    "scaling-check": "scaling_check",
    "verify": "verify",
}
W0_MODES = ("hu_normalized", "random_sphere", "u", "given")

DEFAULT_INSTANCE = {
    "spectrum": {"kind": "logspace", "d": 100, "lo": 1.0, "hi": 1e5},
    "u_mode": "hu_normalized",
    "u": None,
    "c": None,
    "conjugate": False,
}

BASE = {
    "schema_version": SCHEMA_VERSION,
    "kind": "single_run",
    "seed": None,
    "workers": 1,
    "instance": DEFAULT_INSTANCE,
    "run": {
        "mode": "bngd",
        "eps": 1.0,
        "eps_a": 1.0,
        "a0": 1.0,
        "w0_mode": "hu_normalized",
        "w0": None,
        "max_iters": 2000,
        "grad_tol": None,
        "div_tol": 1e300,
        "q_tol": 1e-8,
        "verify": False,
        "fault": None,
    },
    "output": {"dir": "out", "thin": 10, "full_record": 1000},
}

KIND_DEFAULTS = {
    "single_run": {},
    "sweep": {
        "sweep": {
            "eps_a": {"logspace": [-10, 0, 41], "scale": 1.99},
            "eps": {"logspace": [-5, 16, 43]},
            "kappas": [1e2, 1e5],
            "k": 2000,
        },
    },
    "dim_scan": {
        "dim_scan": {
            "dims": [25, 50, 100, 200, 400],
            "n_runs": 50,
            "eps": {"logspace": [-6, -2, 81]},
            "k": 5000,
            "lo": 1.0,
            "hi": 1e4,
            "n_mc": 500,
        },
    },
    "omega": {
        "instance": {"spectrum": {"kind": "linspace", "d": 100, "lo": 1.0, "hi": 1e4},
                     "u_mode": "random_sphere", "u": None, "c": None, "conjugate": False},
        "omega": {"n_samples": 500, "include_samples": False},
    },
    "scaling_check": {"scaling_check": {"n_cases": 100, "steps": 50, "tol": 1e-8}},
    "verify": {"seed": 0, "verify": {"checks": None, "fault": None}},
}

# kinds whose output depends on random draws regardless of the instance
_SAMPLING_KINDS = {"sweep", "dim_scan", "omega", "scaling_check"}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def defaults_for(kind: str) -> dict:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    return deep_merge(deep_merge(BASE, {"kind": kind}), KIND_DEFAULTS[kind])


def load(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve(kind: str, user: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults for ``kind`` < file contents < CLI overrides, then validated."""
    user = dict(user or {})
    if user.get("kind", kind) != kind:
        raise ConfigError(f"config kind {user['kind']!r} does not match command ({kind!r})")
    cfg = deep_merge(defaults_for(kind), user)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key == "out":
            cfg["output"]["dir"] = str(val)
        elif key == "thin":
            cfg["output"]["thin"] = int(val)
        else:
            cfg[key] = val
    validate(cfg)
    return cfg


def needs_seed(cfg: dict) -> bool:
    if cfg["kind"] in _SAMPLING_KINDS:
        return True
    if cfg["kind"] == "single_run":
        inst = cfg["instance"]
        random_u = inst.get("u_mode") != "given" or inst.get("conjugate")
        random_w = cfg["run"].get("w0_mode") == "random_sphere"
        return bool(random_u or random_w)
    return False


def validate(cfg: dict) -> None:
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.get('schema_version')!r}")
    if needs_seed(cfg) and cfg.get("seed") is None:
        raise ConfigError(f"experiment kind {cfg['kind']!r} samples random data: a seed is required (--seed)")
    if cfg.get("seed") is not None and (not isinstance(cfg["seed"], int) or cfg["seed"] < 0):
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg.get("workers"), int) or cfg["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    out = cfg["output"]
    if not isinstance(out.get("thin"), int) or out["thin"] < 1:
        raise ConfigError("output.thin must be a positive integer")
    try:
        spectrum_spec(cfg)
    except KeyError as exc:
        raise ConfigError(f"instance.spectrum: missing field {exc}") from exc
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"instance.spectrum: {exc}") from exc
    run = cfg["run"]
    if run["mode"] not in ("gd", "bngd"):
        raise ConfigError("run.mode must be 'gd' or 'bngd'")
    if run["w0_mode"] not in W0_MODES:
        raise ConfigError(f"run.w0_mode must be one of {W0_MODES}")
    if run["w0_mode"] == "given" and run.get("w0") is None:
        raise ConfigError("run.w0_mode 'given' needs run.w0")
    section = cfg.get(cfg["kind"])
    if cfg["kind"] in ("sweep", "dim_scan"):
        for key in ("eps", "eps_a", "dims"):
            if key in section:
                grid(section[key])


def grid(spec) -> np.ndarray:
    """Materialize a grid spec (list, logspace or linspace form)."""
    if isinstance(spec, (list, tuple)):
        arr = np.asarray(spec, dtype=float)
    elif isinstance(spec, dict) and "logspace" in spec:
        lo, hi, n = spec["logspace"]
        arr = float(spec.get("scale", 1.0)) * np.logspace(float(lo), float(hi), int(n))
    elif isinstance(spec, dict) and "linspace" in spec:
        lo, hi, n = spec["linspace"]
        arr = float(spec.get("scale", 1.0)) * np.linspace(float(lo), float(hi), int(n))
    elif isinstance(spec, (int, float)):
        arr = np.array([float(spec)])
    else:
        raise ConfigError(f"cannot read grid {spec!r}")
    if arr.size == 0:
        raise ConfigError("grid is empty")
    return arr


def spectrum_spec(cfg: dict) -> SpectrumSpec:
    spec = SpectrumSpec.from_dict(cfg["instance"]["spectrum"])
    spec.eigenvalues()
    return spec


def build_instance(cfg: dict, spec: SpectrumSpec | None = None) -> ProblemInstance:
    """The experiment's instance; random parts come from substream (seed, 0)."""
    inst = cfg["instance"]
    spec = spec or spectrum_spec(cfg)
    seed = cfg.get("seed") or 0
    return make_instance(spec, u_mode=inst.get("u_mode", "random_sphere"), u=inst.get("u"),
                         c=inst.get("c"), conjugate=bool(inst.get("conjugate")),
                         rng=substream(seed, 0))


def initial_w(cfg: dict, p: ProblemInstance) -> np.ndarray:
    """w0 per ``run.w0_mode``; random draws come from substream (seed, 1)."""
    mode = cfg["run"]["w0_mode"]
    if mode == "given":
        w0 = np.asarray(cfg["run"]["w0"], dtype=float)
        if w0.shape != (p.dim,):
            raise ConfigError(f"run.w0 has {w0.size} entries, expected {p.dim}")
        return w0
    if mode == "u":
        return np.array(p.u)
    if mode == "random_sphere":
        return random_sphere(substream(cfg.get("seed") or 0, 1), p.dim)
    hu = p.g
    return hu / np.linalg.norm(hu)


def dump(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

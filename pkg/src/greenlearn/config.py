"""Experiment configuration: YAML loading, validation, overrides and seeding.

A config is a nested mapping::

    name: fig1_helmholtz
    seed: 0
    problem:   {kind: helmholtz1d, m: 100, refine: 4, params: {omega: 20.0, u0: 1.0, u1: -1.0}}
    sampler:   {type: brownian_bridge, n_modes: 100, scale: 1.0e+4}
    data:      {n_train: 1000, n_test: 200, noise: 0.0}
    model:     {kernel_G: {...}, kernel_B: {...} | null, null_G: 0, null_B: 0, lam: 1.0e-4, rho: 1.0e-4}
    train:     {solver: adam, epochs: 1000, batch_size: 100, learning_rate: 0.1}
    extrapolate: {grids: [100, 150, 200]}
    spectra:   {m: 20, top_k: 50}
    out: runs/fig1_helmholtz
    desk:      {problem.m: 60, data.n_train: 300}

Kernels use the tagged-dict form of :func:`greenlearn.kernels.kernel_from_dict`.
``desk`` maps dotted keys to reduced-scale values and is applied by
``--desk``; ``--set key=value`` overrides use the same dotted keys.
"""

import copy
import os
import zlib
from importlib import resources

import numpy as np
import yaml

from .exceptions import ConfigError
from .kernels import kernel_from_dict
from .pde_data import PdeProblem

__all__ = [
    "DEFAULTS",
    "load_config",
    "bundled_configs",
    "bundled_path",
    "apply_overrides",
    "parse_override",
    "validate_config",
    "dump_config",
    "seed_for",
    "build_problem",
]

DEFAULTS = {
    "name": "experiment",
    "seed": 0,
    "problem": {"refine": 4, "params": {}},
    "sampler": {"type": "brownian_bridge"},
    "data": {"n_train": 100, "n_test": 100, "noise": 0.0},
    "model": {"kernel_B": None, "null_G": 0, "null_B": 0, "lam": 0.0, "rho": 0.0},
    "train": {
        "solver": "adam",
        "epochs": 100,
        "batch_size": 100,
        "learning_rate": 1e-3,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "amsgrad": True,
    },
    "extrapolate": {"grids": []},
    "spectra": {"m": 20, "top_k": 50},
    "out": None,
    "desk": {},
}

_SOLVERS = ("adam", "direct", "ridge")
ALIASES = {"helmholtz_fig1": "fig1_helmholtz"}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def bundled_configs():
    """Names of the configs shipped with the package."""
    root = resources.files("greenlearn") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name):
    return str(resources.files("greenlearn") / "configs" / f"{name}.yaml")


def load_config(path_or_name, desk=False, overrides=(), seed=None, out=None):
    """Read a YAML config (path or bundled name), apply ``desk`` and overrides, validate."""
    path = path_or_name
    name = ALIASES.get(path_or_name, path_or_name)
    if not os.path.exists(path) and name in bundled_configs():
        path = bundled_path(name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"config not found: {path_or_name}")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(["<root>"], "config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    if desk:
        cfg = apply_overrides(cfg, cfg.get("desk") or {})
    if overrides:
        cfg = apply_overrides(cfg, dict(parse_override(o) for o in overrides))
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = out
    if cfg["out"] is None:
        cfg["out"] = os.path.join("runs", str(cfg["name"]))
    validate_config(cfg)
    return cfg


def parse_override(text):
    """``"train.epochs=50"`` -> ``("train.epochs", 50)``; values are parsed as YAML."""
    if "=" not in text:
        raise ConfigError([text], f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for key, value in overrides.items():
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = copy.deepcopy(value)
    return cfg


def validate_config(cfg):
    """Raise :class:`ConfigError` naming every offending key."""
    bad = []
    known = set(DEFAULTS) | {"description"}
    bad += [k for k in cfg if k not in known]

    def need(cond, key):
        if not cond:
            bad.append(key)

    def num(section, key, lo=None, integer=False, strict=False):
        v = cfg.get(section, {}).get(key)
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        if ok and integer:
            ok = float(v) == int(v)
        if ok and lo is not None:
            ok = v > lo if strict else v >= lo
        need(ok, f"{section}.{key}")

    need(isinstance(cfg.get("seed"), int) and not isinstance(cfg.get("seed"), bool), "seed")
    prob = cfg.get("problem", {})
    kinds = ("poisson1d", "helmholtz1d", "schrodinger2d", "heat1d", "fokker_planck1d")
    need(prob.get("kind") in kinds, "problem.kind")
    num("problem", "m", 2, integer=True)
    num("problem", "refine", 1, integer=True)
    need(isinstance(prob.get("params"), dict), "problem.params")
    need(cfg["sampler"].get("type") in ("brownian_bridge", "kl_exponential"), "sampler.type")
    num("data", "n_train", 1, integer=True)
    num("data", "n_test", 1, integer=True)
    num("data", "noise", 0)
    model = cfg.get("model", {})
    for key in ("kernel_G", "kernel_B"):
        spec = model.get(key)
        if spec is None and key == "kernel_B":
            continue
        try:
            kernel_from_dict(spec)
        except Exception:
            bad.append(f"model.{key}")
    num("model", "lam", 0)
    num("model", "rho", 0)
    train = cfg.get("train", {})
    need(train.get("solver") in _SOLVERS, "train.solver")
    num("train", "epochs", 1, integer=True)
    num("train", "batch_size", 1, integer=True)
    num("train", "learning_rate", 0, strict=True)
    grids = cfg.get("extrapolate", {}).get("grids")
    need(isinstance(grids, list) and all(isinstance(g, int) and g >= 2 for g in grids),
         "extrapolate.grids")
    num("spectra", "m", 2, integer=True)
    num("spectra", "top_k", 1, integer=True)
    need(isinstance(cfg.get("desk"), dict), "desk")
    if bad:
        raise ConfigError(sorted(set(bad)))
    return cfg


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def seed_for(seed, *tags):
    """Deterministic generator from a base seed and string/int tags.

    Strings are hashed with CRC32 so streams are stable across processes.
    """
    words = [int(seed)]
    for t in tags:
        words.append(zlib.crc32(t.encode()) if isinstance(t, str) else int(t))
    return np.random.default_rng(np.random.SeedSequence(words))


def build_problem(cfg):
    p = cfg["problem"]
    return PdeProblem(p["kind"], int(p["m"]), dict(p.get("params") or {}),
                      dict(cfg["sampler"]), int(p.get("refine", 4)))

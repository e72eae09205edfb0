"""Run configuration: defaults, JSON loading, environment overrides and validation."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass

from .params import LayerParams
from .torus_field import INTERP_MODES

ENV_PREFIX = "TNS_"

DEFAULTS = {
    "grid": {"dim": 2, "resolution": 32},
    "noise": {
        "K": 1,
        "T": 0.25,
        "steps": 50,
        "seed": 0,
        "stream_functions": [{"mean": [0.0, 0.0], "modes": [{"k": [0, 1], "cos": -0.5}]}],
    },
    "layers": {
        "eps_n": 1e-2, "l": 0.0, "delta": 1e-2, "Gamma": 4.0, "a": 1.0, "gamma": 1.4,
        "mu": 0.1, "lambda": 0.1, "density_floor": 1e-8,
    },
    "solver": {"dt_safety": 16.0, "interp": "trig", "op_tol": 1e-8, "dealias": False},
    "initial": {
        "density": {"mean": 1.0, "modes": [{"k": [1, 0], "cos": 0.2}]},
        "momentum": [{"mean": 0.0, "modes": [{"k": [0, 1], "sin": 0.2}]},
                     {"mean": 0.0, "modes": []}],
        "floor_lift": 1e-6,
    },
    "diagnostics": {"alpha": 0.25, "kappa": 0.5, "renorm_k": 4.0},
    "sweep": {"seeds": [], "eps_n": [], "l": [], "delta": [], "steps": []},
    "output": {"directory": "out", "cadence": 10},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violated key."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)

    def as_dict(self) -> dict:
        return {"error": "config", "violations": self.errors}


def _merge(base: dict, over: dict, errors: list[str], prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        name = f"{prefix}{key}"
        if key not in base:
            errors.append(f"{name}: unknown key")
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                errors.append(f"{name}: expected an object")
            else:
                out[key] = _merge(base[key], val, errors, name + ".")
        else:
            out[key] = val
    return out


def _env_overrides(env) -> dict:
    """``TNS_NOISE__SEED=3`` -> ``{"noise": {"seed": 3}}`` (values parsed as JSON when possible)."""
    out: dict = {}
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].split("__")
        if len(path) != 2:
            continue
        section, key = path[0].lower(), path[1]
        key = key if key in DEFAULTS.get(section, {}) else key.lower()
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        out.setdefault(section, {})[key] = val
    return out


def _num(errors, name, val, lo=None, hi=None, integer=False, lo_open=False):
    kind = int if integer else (int, float)
    if isinstance(val, bool) or not isinstance(val, kind):
        errors.append(f"{name}: expected {'an integer' if integer else 'a number'}")
        return False
    if lo is not None and (val <= lo if lo_open else val < lo):
        errors.append(f"{name}: must be {'>' if lo_open else '>='} {lo}")
        return False
    if hi is not None and val > hi:
        errors.append(f"{name}: must be <= {hi}")
        return False
    return True


def _check_modes(errors, name, spec, dim, vector_coef):
    if not isinstance(spec, dict):
        errors.append(f"{name}: expected an object")
        return
    unknown = set(spec) - {"mean", "modes"}
    if unknown:
        errors.append(f"{name}: unknown keys {sorted(unknown)}")
    mean = spec.get("mean", 0.0)
    if isinstance(mean, list) and any(isinstance(m, bool) or not isinstance(m, (int, float))
                                      for m in mean):
        errors.append(f"{name}.mean: expected numbers")
    for i, mode in enumerate(spec.get("modes", [])):
        mname = f"{name}.modes[{i}]"
        if not isinstance(mode, dict):
            errors.append(f"{mname}: expected an object")
            continue
        k = mode.get("k")
        if not (isinstance(k, list) and len(k) == dim and all(isinstance(c, int) for c in k)):
            errors.append(f"{mname}.k: expected {dim} integers")
        for part in ("cos", "sin"):
            c = mode.get(part, 0.0)
            ok = isinstance(c, (int, float)) or (
                vector_coef and isinstance(c, list) and len(c) == 3)
            if not ok or isinstance(c, bool):
                errors.append(f"{mname}.{part}: expected a number" + (" or 3-vector" if vector_coef else ""))
        extra = set(mode) - {"k", "cos", "sin"}
        if extra:
            errors.append(f"{mname}: unknown keys {sorted(extra)}")


def validate(cfg: dict) -> list[str]:
    errors: list[str] = []
    g = cfg["grid"]
    dim_ok = g["dim"] in (2, 3) and not isinstance(g["dim"], bool)
    if not dim_ok:
        errors.append("grid.dim: must be 2 or 3")
    M = g["resolution"]
    if _num(errors, "grid.resolution", M, lo=8, integer=True) and M & (M - 1):
        errors.append("grid.resolution: must be a power of two")
    dim = g["dim"] if dim_ok else 2

    n = cfg["noise"]
    _num(errors, "noise.K", n["K"], lo=1, integer=True)
    _num(errors, "noise.T", n["T"], lo=0, lo_open=True)
    _num(errors, "noise.steps", n["steps"], lo=1, integer=True)
    _num(errors, "noise.seed", n["seed"], lo=0, integer=True)
    sf = n["stream_functions"]
    if not isinstance(sf, list):
        errors.append("noise.stream_functions: expected a list")
    else:
        if isinstance(n["K"], int) and len(sf) != n["K"]:
            errors.append(f"noise.stream_functions: expected K = {n['K']} entries, got {len(sf)}")
        for i, spec in enumerate(sf):
            _check_modes(errors, f"noise.stream_functions[{i}]", spec, dim, dim == 3)
            mean = spec.get("mean", [0.0] * dim) if isinstance(spec, dict) else None
            if mean is not None and not (isinstance(mean, list) and len(mean) == dim):
                errors.append(f"noise.stream_functions[{i}].mean: expected {dim} numbers")

    lay = cfg["layers"]
    for key, val in lay.items():
        _num(errors, f"layers.{key}", val)
    if not any(e.startswith("layers.") for e in errors):
        try:
            layer_params(cfg)
        except ValueError as exc:
            errors += [f"layers: {e}" for e in str(exc).split("; ")]

    s = cfg["solver"]
    _num(errors, "solver.dt_safety", s["dt_safety"], lo=0, lo_open=True)
    if s["interp"] not in INTERP_MODES:
        errors.append(f"solver.interp: must be one of {list(INTERP_MODES)}")
    _num(errors, "solver.op_tol", s["op_tol"], lo=0, lo_open=True)
    if not isinstance(s["dealias"], bool):
        errors.append("solver.dealias: expected true or false")

    ini = cfg["initial"]
    _check_modes(errors, "initial.density", ini["density"], dim, False)
    mom = ini["momentum"]
    if not (isinstance(mom, list) and len(mom) == dim):
        errors.append(f"initial.momentum: expected {dim} component specs")
    else:
        for i, spec in enumerate(mom):
            _check_modes(errors, f"initial.momentum[{i}]", spec, dim, False)
    _num(errors, "initial.floor_lift", ini["floor_lift"], lo=0, lo_open=True)

    d = cfg["diagnostics"]
    if _num(errors, "diagnostics.alpha", d["alpha"], lo=0, lo_open=True) and d["alpha"] >= 1:
        errors.append("diagnostics.alpha: must be < 1")
    _num(errors, "diagnostics.kappa", d["kappa"], lo=0, lo_open=True)
    _num(errors, "diagnostics.renorm_k", d["renorm_k"], lo=1)

    for key, val in cfg["sweep"].items():
        if not isinstance(val, list):
            errors.append(f"sweep.{key}: expected a list")
            continue
        for i, item in enumerate(val):
            _num(errors, f"sweep.{key}[{i}]", item, lo=0, integer=key in ("seeds", "steps"))

    o = cfg["output"]
    if not isinstance(o["directory"], str) or not o["directory"]:
        errors.append("output.directory: expected a non-empty path")
    _num(errors, "output.cadence", o["cadence"], lo=1, integer=True)
    return errors


def layer_params(cfg: dict) -> LayerParams:
    lay = dict(cfg["layers"])
    lay["lam"] = lay.pop("lambda")
    return LayerParams(**lay)


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration document."""

    data: dict

    @classmethod
    def from_dict(cls, doc: dict | None = None, env=None) -> RunConfig:
        errors: list[str] = []
        doc = doc or {}
        if not isinstance(doc, dict):
            raise ConfigError(["<root>: expected an object"])
        cfg = _merge(DEFAULTS, doc, errors)
        if env is not None:
            cfg = _merge(cfg, _env_overrides(env), errors)
        if not errors:
            errors = validate(cfg)
        if errors:
            raise ConfigError(errors)
        return cls(cfg)

    @classmethod
    def load(cls, path, env=None) -> RunConfig:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<file>: not valid JSON ({exc})"]) from None
        return cls.from_dict(doc, os.environ if env is None else env)

    def with_changes(self, **sections) -> RunConfig:
        """New config with ``section={key: value}`` updates applied."""
        doc = copy.deepcopy(self.data)
        for sec, upd in sections.items():
            doc[sec] = {**doc[sec], **upd}
        return RunConfig.from_dict(doc)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def params(self) -> LayerParams:
        return layer_params(self.data)

    @property
    def seed(self) -> int:
        return int(self.data["noise"]["seed"])

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

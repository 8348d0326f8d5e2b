"""
Problem files.

A problem is a JSON object::

    {
      "grid": {"nx": 17, "ny": 17, "h": 0.0625, "shape": "rectangle", "origin": [0, 0]},
      "exponent": {"family": "gaussian", "base": 2, "amplitude": 1, "center": [0.5, 0.5], "width": 0.25},
      "boundary": {"expr": "0.02*x + 0.01*y"},
      "solver": "direct",
      "epsilon": 0.0,
      "kp_max": 64,
      "tolerances": {"step_tol": 1e-9},
      "scheme": "upwind-log",
      "stencil": "directional",
      "reference": {"kind": "aronsson"},
      "epsilons": [0.4, 0.2, 0.1, 0.05],
      "harnack": {"center": [0.5, 0.5], "radii": [0.1, 0.2]},
      "convergence": {"h": [0.125, 0.0625, 0.03125, 0.015625]}
    }

``exponent`` is a family (``constant``, ``affine``, ``gaussian``) or
``{"csv": path}`` with ``x,y,p`` rows.  ``boundary`` is ``{"expr": ...}``
(a sympy expression in ``x`` and ``y``), ``{"reference": kind, ...}`` or
``{"csv": path}`` with ``x,y,value`` rows.  Relative paths resolve against
the problem file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np
import sympy

from .exponent import exponent_from_csv, exponent_from_family, family_from_dict
from .gadgets import reference_solutions
from .grid import BoundaryData, GridError, GridFunction, make_domain, read_csv_values
from .solvers import Problem, Tolerances, default_k_schedule

__all__ = ["ConfigError", "SCHEMA", "load_config", "config_hash", "build_problem", "boundary_callable"]


class ConfigError(ValueError):
    """Problem file missing, malformed or inconsistent."""


_NUM = {"type": "number"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "required": ["grid", "exponent", "boundary"],
    "properties": {
        "grid": {
            "type": "object",
            "required": ["nx", "ny", "h"],
            "properties": {
                "nx": {"type": "integer", "minimum": 3},
                "ny": {"type": "integer", "minimum": 3},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "shape": {"enum": ["rectangle", "disk"]},
                "origin": _PAIR,
            },
            "additionalProperties": False,
        },
        "exponent": {"type": "object"},
        "boundary": {
            "type": "object",
            "oneOf": [
                {"required": ["expr"]},
                {"required": ["reference"]},
                {"required": ["csv"]},
            ],
        },
        "solver": {"enum": ["direct", "variational"]},
        "epsilon": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "kp_max": {"type": "number", "minimum": 2},
        "k_schedule": {"type": "array", "items": _NUM, "minItems": 1},
        "tolerances": {
            "type": "object",
            "properties": {
                "residual_tol": {"type": "number", "exclusiveMinimum": 0},
                "step_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "descent_max_iters": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "scheme": {"enum": ["upwind-log", "centered"]},
        "stencil": {"enum": ["directional", "minmax"]},
        "omega": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "reference": {"type": "object", "required": ["kind"]},
        "epsilons": {"type": "array", "items": _NUM, "minItems": 1},
        "harnack": {
            "type": "object",
            "required": ["center", "radii"],
            "properties": {
                "center": _PAIR,
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "convergence": {
            "type": "object",
            "properties": {"h": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 3}},
        },
    },
}


def load_config(path) -> dict:
    """Read and schema-check a problem file; records its directory under ``_base``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read problem file {path}: {exc.strerror or exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    validate_config(cfg)
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def validate_config(cfg: dict):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"problem file invalid at {where}: {exc.message}") from exc


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring private keys."""
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _resolve(cfg: dict, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def boundary_callable(expr: str):
    """Vectorised ``f(x, y)`` from a sympy expression string."""
    x, y = sympy.symbols("x y")
    try:
        e = sympy.sympify(expr, locals={"x": x, "y": y})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse boundary expression {expr!r}") from exc
    extra = e.free_symbols - {x, y}
    if extra:
        raise ConfigError(f"boundary expression uses unknown symbols {sorted(map(str, extra))}")
    f = sympy.lambdify((x, y), e, modules="numpy")

    def phi(xv, yv):
        return np.broadcast_to(np.asarray(f(xv, yv), dtype=float), np.broadcast(xv, yv).shape)

    return phi


def _domain(cfg):
    g = cfg["grid"]
    try:
        return make_domain(g["nx"], g["ny"], g["h"], g.get("shape", "rectangle"), tuple(g.get("origin", (0.0, 0.0))))
    except GridError as exc:
        raise ConfigError(str(exc)) from exc


def _exponent(cfg, d):
    block = cfg["exponent"]
    try:
        if "csv" in block:
            return exponent_from_csv(d, _resolve(cfg, block["csv"]))
        return exponent_from_family(d, family_from_dict(block))
    except (KeyError, OSError, ValueError) as exc:
        raise ConfigError(f"bad exponent: {exc}") from exc


def reference_function(cfg, d) -> GridFunction:
    ref = cfg.get("reference")
    if ref is None:
        return None
    return _reference(ref, d)


def _reference(ref, d):
    try:
        return reference_solutions(ref["kind"], d, e=tuple(ref.get("e", (1.0, 0.0))), x0=ref.get("x0"))
    except ValueError as exc:
        raise ConfigError(f"bad reference: {exc}") from exc


def _boundary(cfg, d):
    block = cfg["boundary"]
    if "expr" in block:
        phi = boundary_callable(block["expr"])
        try:
            return BoundaryData.from_function(d, phi)
        except (GridError, ValueError) as exc:
            raise ConfigError(f"bad boundary expression: {exc}") from exc
    if "reference" in block:
        ref = dict(block)
        ref["kind"] = block["reference"]
        return BoundaryData.from_grid_function(_reference(ref, d))
    try:
        vals = read_csv_values(d, _resolve(cfg, block["csv"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad boundary csv: {exc}") from exc
    vals = vals[d.boundary_mask]
    if np.isnan(vals).any():
        raise ConfigError("boundary csv misses boundary nodes")
    return BoundaryData(d, vals)


def build_problem(cfg: dict) -> Problem:
    """Assemble a :class:`Problem` from a validated (and overridden) config."""
    d = _domain(cfg)
    field = _exponent(cfg, d)
    bnd = _boundary(cfg, d)
    tol = Tolerances(**cfg.get("tolerances", {}))
    ks = cfg.get("k_schedule")
    if ks is None:
        ks = default_k_schedule(field.p_min, cfg.get("kp_max", 64.0))
    try:
        return Problem(
            d, bnd, field,
            epsilon=cfg.get("epsilon", 0.0),
            k_schedule=ks,
            tolerances=tol,
            scheme=cfg.get("scheme", "upwind-log"),
            stencil=cfg.get("stencil", "directional"),
            omega=cfg.get("omega", 0.8),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(cfg: dict, eps=None, kmax=None, tol=None, scheme=None) -> dict:
    out = copy.deepcopy(cfg)
    if eps is not None:
        out["epsilons"] = list(eps)
    if kmax is not None:
        out["kp_max"] = float(kmax)
        out.pop("k_schedule", None)
    if tol is not None:
        t = dict(out.get("tolerances", {}))
        t["residual_tol"] = float(tol)
        t["step_tol"] = float(tol)
        out["tolerances"] = t
    if scheme is not None:
        out["scheme"] = scheme
    validate_config({k: v for k, v in out.items() if not k.startswith("_")})
    return out

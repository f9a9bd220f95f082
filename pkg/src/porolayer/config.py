"""JSON run configurations and forcing definitions.

Forcing entries take one of three forms:

* a number (constant),
* an expression string in ``t``, ``x``, ``z`` using numpy functions
  (``"-sin(pi*x)"``); vector forcings are lists of two such entries,
* a table ``{"x": [...], "values": [...]}`` interpolated linearly in ``x``
  (constant in ``t`` and ``z``).
"""
from __future__ import annotations

import ast
from pathlib import Path

import numpy as np

from .geometry import parse_microstructure
from .macro import MacroConfig
from .micro import MicroConfig
from .tensors import EffectivePlateTensors


class ConfigError(ValueError):
    pass


_NAMES = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh",
    "arctan", "minimum", "maximum", "where", "heaviside", "pi")}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
                  ast.Constant, ast.Compare, ast.operator, ast.unaryop, ast.cmpop)


def compile_expression(expr, variables=("t", "x", "z")):
    """Compile a scalar expression into ``f(*variables)`` with numpy semantics."""
    if isinstance(expr, (int, float)):
        c = float(expr)
        return lambda *args: c + 0.0 * np.asarray(args[1] if len(args) > 1 else args[0], float)
    if not isinstance(expr, str):
        raise ConfigError(f"forcing entry must be a number or an expression string, got {expr!r}")
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"expression {expr!r} uses a disallowed construct "
                              f"({type(node).__name__})")
        if isinstance(node, ast.Name) and node.id not in _NAMES and node.id not in variables:
            raise ConfigError(f"unknown name {node.id!r} in expression {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                               and node.func.id in _NAMES):
            raise ConfigError(f"only numpy functions may be called in {expr!r}")
    code = compile(tree, "<forcing>", "eval")

    def f(*args):
        env = dict(_NAMES)
        env.update(zip(variables, args))
        ref = np.asarray(args[1] if len(args) > 1 else args[0], dtype=float)
        return np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float) + 0.0 * ref

    return f


def _table(spec, what):
    try:
        xs = np.asarray(spec["x"], float)
        vs = np.asarray(spec["values"], float)
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{what}: table needs numeric 'x' and 'values'") from None
    if xs.ndim != 1 or xs.shape != vs.shape or len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ConfigError(f"{what}: table 'x' must increase and match 'values' in length")
    return lambda t, x, *rest: np.interp(x, xs, vs)


def scalar_forcing(spec, what, variables=("t", "x")):
    if spec is None:
        spec = 0.0
    if isinstance(spec, dict):
        return _table(spec, what)
    return compile_expression(spec, variables)


def vector_forcing(spec, what):
    """``f(t, x, z) -> (fx, fz)`` from a two-entry list (or None for zero)."""
    if spec is None:
        spec = [0.0, 0.0]
    if not isinstance(spec, (list, tuple)) or len(spec) != 2:
        raise ConfigError(f"{what} must be a list of two components")
    comps = [(_table(c, what) if isinstance(c, dict) else compile_expression(c))
             for c in spec]
    return lambda t, x, z: (comps[0](t, x, z), comps[1](t, x, z))


def _resolve(base, name):
    p = Path(name)
    return p if p.is_absolute() else Path(base) / p


_MACRO_KEYS = {"H", "L", "nx", "nz", "n_plate", "dt", "T", "theta", "tensors_file", "tensors",
               "m_inertia", "m_stiffness", "preset", "cell_volume", "grading", "viscosity",
               "f_plus", "f_minus", "g", "v0_plus", "v0_minus", "vtk_stride",
               "snapshot_stride", "saddle_method"}
_MICRO_KEYS = {"H", "L", "dt", "T", "theta", "epsilon_inverse", "cell_resolution",
               "layer_cell_file", "h_max", "grading", "viscosity", "f_plus", "f_minus",
               "f_layer", "F0_plus", "F0_minus", "F0_layer", "vtk_stride", "snapshot_stride",
               "saddle_method"}


def _check_keys(data, allowed, what):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} config must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {unknown}")


def load_tensors(data, base):
    if "tensors" in data:
        t = data["tensors"]
        if isinstance(t, dict) and set(t) <= {"a", "b", "c", "solid_volume"}:
            return EffectivePlateTensors.from_scalars(t.get("a", 0.0), t.get("b", 0.0),
                                                      t.get("c", 0.0), t.get("solid_volume", 1.0))
        return EffectivePlateTensors.from_dict(t)
    if "tensors_file" not in data:
        raise ConfigError("macro config needs 'tensors_file' or inline 'tensors'")
    path = _resolve(base, data["tensors_file"])
    if not path.exists():
        raise FileNotFoundError(f"tensors file not found: {path}")
    return EffectivePlateTensors.load(path)


def macro_config_from_dict(data, base="."):
    _check_keys(data, _MACRO_KEYS, "macro")
    tens = load_tensors(data, base)
    kw = {k: data[k] for k in ("H", "L", "nx", "nz", "n_plate", "dt", "T", "theta",
                               "m_inertia", "m_stiffness", "grading", "viscosity",
                               "snapshot_stride", "saddle_method") if k in data}
    kw["f_plus"] = vector_forcing(data.get("f_plus"), "f_plus")
    kw["f_minus"] = vector_forcing(data.get("f_minus"), "f_minus")
    kw["g"] = scalar_forcing(data.get("g"), "g")
    kw["v0_plus"] = vector_forcing(data.get("v0_plus"), "v0_plus")
    kw["v0_minus"] = vector_forcing(data.get("v0_minus"), "v0_minus")
    try:
        cfg = MacroConfig(tens, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    preset = data.get("preset", "printed")
    if preset == "volume_consistent":
        cfg = cfg.volume_consistent(data.get("cell_volume", 2.0))
    elif preset != "printed":
        raise ConfigError(f"unknown preset {preset!r} (use 'printed' or 'volume_consistent')")
    return cfg


def micro_config_from_dict(data, base="."):
    _check_keys(data, _MICRO_KEYS, "micro")
    for key in ("epsilon_inverse", "layer_cell_file"):
        if key not in data:
            raise ConfigError(f"micro config needs {key!r}")
    path = _resolve(base, data["layer_cell_file"])
    if not path.exists():
        raise FileNotFoundError(f"layer cell file not found: {path}")
    cell = parse_microstructure(path)
    kw = {k: data[k] for k in ("H", "L", "dt", "T", "theta", "h_max", "grading", "viscosity",
                               "snapshot_stride", "saddle_method") if k in data}
    if "cell_resolution" in data:
        kw["refine"] = data["cell_resolution"]
    for key in ("f_plus", "f_minus"):
        if key in data:
            kw[key] = vector_forcing(data[key], key)
    for key in ("f_layer", "F0_plus", "F0_minus", "F0_layer"):
        if data.get(key) is not None:
            kw[key] = vector_forcing(data[key], key)
    try:
        return MicroConfig(int(data["epsilon_inverse"]), cell, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

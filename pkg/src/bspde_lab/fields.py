"""Deterministic data generation: seeded random fields and a tiny formula language.

Formulas are plain arithmetic in ``x``, ``t`` and ``W`` with ``sin``, ``cos``,
``exp``, ``pi`` and numeric literals, e.g. ``"sin(pi*x) * (1 + 0.5*W)"``.
They are checked against a whitelist of syntax nodes and compiled once.
"""

from __future__ import annotations

import ast
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, UsageError
from .grid import Discretization
from .solver import AdaptedField
from .tree import ScenarioTree

FIELD_KINDS = ("coefficient", "terminal", "source")

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}
_VARS = ("x", "t", "W")
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
            ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def parse_formula(text: str, variables: tuple = _VARS) -> Callable:
    """Compile ``text`` to a function of ``variables``; the default signature is ``fn(t, W, x)``.

    Raises ConfigurationError naming the offending token.
    """
    if not isinstance(text, str) or not text.strip():
        raise ConfigurationError(f"formula must be a non-empty string, got {text!r}")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"formula {text!r}: syntax error at column {exc.offset}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigurationError(f"formula {text!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"formula {text!r}: only numeric literals are allowed")
        if isinstance(node, ast.Name) and node.id not in variables and node.id not in _FUNCS and node.id not in _CONSTS:
            raise ConfigurationError(f"formula {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or len(node.args) != 1 or node.keywords:
                raise ConfigurationError(f"formula {text!r}: only sin, cos, exp of one argument may be called")
    code = compile(tree, "<formula>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}
    order = ("t", "W", "x") if variables == _VARS else variables

    def fn(*args):
        return eval(code, env, dict(zip(order, args)))

    fn.source = text
    return fn


def formula_field(text: str, tree: ScenarioTree, disc: Discretization, levels: Optional[range] = None) -> AdaptedField:
    return AdaptedField.from_function(tree, disc, parse_formula(text), levels)


def _levels_for(kind: str, tree: ScenarioTree) -> range:
    if kind == "terminal":
        return range(tree.levels, tree.levels + 1)
    return range(tree.levels)


def generate_random_field(seed: int, amplitude: float, tree: ScenarioTree, disc: Discretization,
                          kind: str) -> AdaptedField:
    """Adapted random field with sup norm at most ``amplitude``.

    Coefficients are pointwise uniform draws on [-1.25, 1.25] * amplitude
    clamped to +-amplitude, so the bound is attained once there are a few
    hundred samples.  Terminal values and sources are smooth: a random
    combination of the first four sine modes per node, clamped the same way.
    Terminal fields live on level N only, the others on levels 0..N-1.
    """
    if kind not in FIELD_KINDS:
        raise UsageError(f"field kind must be one of {FIELD_KINDS}, got {kind!r}")
    if not amplitude >= 0:
        raise UsageError(f"amplitude must be >= 0, got {amplitude}")
    levels = _levels_for(kind, tree)
    if amplitude == 0:
        return AdaptedField.zeros(tree, disc, levels)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), FIELD_KINDS.index(kind)])))
    modes = np.stack([disc.sine_mode(k) / k for k in range(1, 5)])
    data = []
    for n in levels:
        nodes = tree.node_count(n)
        if kind == "coefficient":
            raw = rng.uniform(-1.25, 1.25, size=(nodes, disc.M))
        else:
            raw = rng.normal(size=(nodes, modes.shape[0])) @ modes
        data.append(amplitude * np.clip(raw, -1.0, 1.0))
    return AdaptedField(tree, disc, data, levels.start)

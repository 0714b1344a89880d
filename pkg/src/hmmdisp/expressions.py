"""Small, safe expression language for inline coefficients.

Allowed: numbers, ``+ - * / **``, parentheses, the variables passed to
:func:`compile_expression` (typically ``x, y, t``), the constants ``pi``
and ``e``, and the functions ``sin cos exp sqrt abs tanh min max`` and
``gauss(x0, y0, w)``: the unit-mass Gaussian of width ``w`` centred at
``(x0, y0)``, evaluated at ``(x, y)``.

Expressions are parsed with :mod:`ast` and evaluated over numpy arrays;
nothing else (attributes, names, calls) is reachable.
"""

import ast
import math

import numpy as np

from .errors import InputError

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
    "tanh": np.tanh, "min": np.minimum, "max": np.maximum,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


class Expression:
    """Compiled expression; call with keyword arrays for its variables."""

    def __init__(self, source, variables):
        self.source = source
        self.variables = tuple(variables)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise InputError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise InputError(f"only numeric literals allowed in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise InputError(f"unknown name {node.id!r} in {self.source!r}; "
                                 f"allowed: {', '.join(self.variables + tuple(_CONSTS))}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise InputError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                raise InputError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise InputError(f"invalid call in {self.source!r}")
            name = node.func.id
            if name == "gauss":
                if not {"x", "y"} <= set(self.variables):
                    raise InputError("gauss() needs the coordinates x and y")
                if len(node.args) != 3:
                    raise InputError("gauss takes 3 arguments: gauss(x0, y0, width)")
            elif name in _FUNCS:
                want = 2 if name in ("min", "max") else 1
                if len(node.args) != want:
                    raise InputError(f"{name} takes {want} argument(s)")
            else:
                raise InputError(f"unknown function {name!r} in {self.source!r}")
            for a in node.args:
                self._check(a)
        else:
            raise InputError(f"unsupported syntax {type(node).__name__} in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        args = [self._eval(a, env) for a in node.args]
        if node.func.id == "gauss":
            x0, y0, w = args
            r2 = (env["x"] - x0) ** 2 + (env["y"] - y0) ** 2
            return np.exp(-r2 / (2.0 * w ** 2)) / (2.0 * np.pi * w ** 2)
        return _FUNCS[node.func.id](*args)

    def __call__(self, **values):
        missing = set(self.variables) - set(values)
        if missing:
            raise TypeError(f"missing variables {sorted(missing)}")
        env = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        with np.errstate(all="ignore"):
            return self._eval(self._tree, env)

    def __repr__(self):
        return f"Expression({self.source!r})"


def compile_expression(source, variables=("x", "y", "t")):
    return Expression(str(source), variables)

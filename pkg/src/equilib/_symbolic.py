"""Sympy-backed compilation of closed-form expressions into vectorized jets.

Built-in fields and charts are written as sympy expressions once; every
partial derivative they need is taken symbolically and lambdified, so the
numerical layer only ever sees exact (rounding-limited) derivatives.
"""

from __future__ import annotations

from itertools import combinations_with_replacement, permutations

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

_ALLOWED_FUNCS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "pi": sp.pi,
    "E": sp.E,
}


def coordinate_symbols(n: int) -> tuple:
    return sp.symbols(f"x1:{n + 1}", real=True)


def parse_expression(text: str, n: int, extra: dict | None = None) -> sp.Expr:
    """Parse an arithmetic expression in the variables ``x1..xn``.

    Only ``+ - * / ^``, numbers, the variables and the functions
    sin cos tan exp log sqrt are accepted; any other name is rejected.
    """
    syms = coordinate_symbols(n)
    local = dict(_ALLOWED_FUNCS)
    local.update({s.name: s for s in syms})
    if extra:
        local.update(extra)
    transformations = standard_transformations + (convert_xor,)
    try:
        expr = parse_expr(text, local_dict=local, global_dict={"Integer": sp.Integer,
                                                               "Float": sp.Float,
                                                               "Rational": sp.Rational,
                                                               "Symbol": sp.Symbol},
                          transformations=transformations, evaluate=True)
    except NameError as exc:
        # unknown function names surface as a missing sympy 'Function' factory
        raise ValueError(f"cannot parse expression {text!r}: only the functions "
                         f"{', '.join(sorted(_ALLOWED_FUNCS))} are allowed") from exc
    except Exception as exc:  # sympy raises a zoo of exception types here
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc
    allowed = set(local.values())
    unknown = [s for s in expr.free_symbols if s not in allowed]
    if unknown:
        raise ValueError(f"unknown symbols {sorted(map(str, unknown))} in {text!r}")
    return expr


def _broadcast(values, shape):
    out = []
    for v in values:
        a = np.asarray(v, dtype=float)
        out.append(np.broadcast_to(a, shape) if a.shape != shape else a)
    return out


class CompiledJet:
    """Value and all partials up to ``order`` of one expression.

    ``evaluate(points)`` returns a list ``[value, grad, hess, third]``
    truncated to ``order``, with leading batch axis ``N``.
    """

    def __init__(self, expr: sp.Expr, symbols, order: int = 3):
        self.expr = expr
        self.symbols = tuple(symbols)
        self.n = len(self.symbols)
        self.order = order
        derivs = {(): expr}
        for k in range(1, order + 1):
            for idx in combinations_with_replacement(range(self.n), k):
                derivs[idx] = sp.diff(derivs[idx[:-1]], self.symbols[idx[-1]])
        self._keys = list(derivs)
        self._fn = sp.lambdify(self.symbols, [derivs[k] for k in self._keys],
                               modules="numpy", cse=True)
        self._value_fn = sp.lambdify(self.symbols, expr, modules="numpy")

    def value(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        with np.errstate(all="ignore"):
            v = self._value_fn(*points.T)
        return np.array(np.broadcast_to(np.asarray(v, dtype=float), points.shape[:-1]))

    def evaluate(self, points: np.ndarray, order: int | None = None) -> list[np.ndarray]:
        order = self.order if order is None else order
        points = np.asarray(points, dtype=float)
        N = points.shape[0]
        n = self.n
        with np.errstate(all="ignore"):
            raw = self._fn(*points.T)
        raw = dict(zip(self._keys, _broadcast(raw, (N,))))
        out = [np.array(raw[()])]
        for k in range(1, order + 1):
            arr = np.empty((N,) + (n,) * k)
            for idx in combinations_with_replacement(range(n), k):
                for perm in set(permutations(idx)):
                    arr[(slice(None),) + perm] = raw[idx]
            out.append(arr)
        return out


class CompiledMatrixJet:
    """Symmetric matrix field with first and second partials.

    Returns ``(g, dg, d2g)`` with ``dg[..., a, b, c] = d_c g_ab`` and
    ``d2g[..., a, b, c, d] = d_c d_d g_ab``.
    """

    def __init__(self, matrix: sp.Matrix, symbols):
        self.symbols = tuple(symbols)
        n = len(self.symbols)
        self.n = n
        entries, keys = [], []
        for a in range(n):
            for b in range(a, n):
                e = sp.sympify(matrix[a, b])
                entries.append(e)
                keys.append(("g", a, b))
                for c in range(n):
                    dc = sp.diff(e, self.symbols[c])
                    entries.append(dc)
                    keys.append(("dg", a, b, c))
                    for d in range(c, n):
                        entries.append(sp.diff(dc, self.symbols[d]))
                        keys.append(("d2g", a, b, c, d))
        self._keys = keys
        self._fn = sp.lambdify(self.symbols, entries, modules="numpy", cse=True)
        g_only = [matrix[a, b] for a in range(n) for b in range(a, n)]
        self._g_fn = sp.lambdify(self.symbols, g_only, modules="numpy")

    def metric(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        N, n = points.shape[0], self.n
        with np.errstate(all="ignore"):
            vals = _broadcast(self._g_fn(*points.T), (N,))
        g = np.empty((N, n, n))
        i = 0
        for a in range(n):
            for b in range(a, n):
                g[:, a, b] = g[:, b, a] = vals[i]
                i += 1
        return g

    def jet(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        N, n = points.shape[0], self.n
        with np.errstate(all="ignore"):
            vals = _broadcast(self._fn(*points.T), (N,))
        g = np.empty((N, n, n))
        dg = np.empty((N, n, n, n))
        d2g = np.empty((N, n, n, n, n))
        for key, v in zip(self._keys, vals):
            if key[0] == "g":
                _, a, b = key
                g[:, a, b] = g[:, b, a] = v
            elif key[0] == "dg":
                _, a, b, c = key
                dg[:, a, b, c] = dg[:, b, a, c] = v
            else:
                _, a, b, c, d = key
                d2g[:, a, b, c, d] = d2g[:, b, a, c, d] = v
                d2g[:, a, b, d, c] = d2g[:, b, a, d, c] = v
        return g, dg, d2g

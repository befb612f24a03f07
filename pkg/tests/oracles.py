"""Independent reference computations used by the tests.

Nothing here imports equilib: each oracle is a separate implementation
(symbolic differentiation, power series, bisection) of a quantity the
package computes numerically.
"""

import math
from functools import lru_cache

import numpy as np
import sympy as sp


def symbols(n):
    return sp.symbols(f"x1:{n + 1}", real=True)


@lru_cache(maxsize=None)
def _symbolic_curvature(key, n):
    x = symbols(n)
    g = sp.Matrix(n, n, lambda i, j: sp.sympify(key[i][j], locals={f"x{k + 1}": x[k] for k in range(n)}))
    ginv = sp.simplify(g.inv())
    gam = [[[sp.simplify(sum(ginv[a, d] * (sp.diff(g[d, b], x[c]) + sp.diff(g[d, c], x[b])
                                           - sp.diff(g[b, c], x[d])) for d in range(n)) / 2)
             for c in range(n)] for b in range(n)] for a in range(n)]
    # R^a_bcd = ∂_c Γ^a_db − ∂_d Γ^a_cb + Γ^a_ce Γ^e_db − Γ^a_de Γ^e_cb
    R = sp.MutableDenseNDimArray.zeros(n, n, n, n)
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for d in range(n):
                    expr = sp.diff(gam[a][d][b], x[c]) - sp.diff(gam[a][c][b], x[d])
                    expr += sum(gam[a][c][e] * gam[e][d][b] - gam[a][d][e] * gam[e][c][b] for e in range(n))
                    R[a, b, c, d] = expr
    low = sp.MutableDenseNDimArray.zeros(n, n, n, n)
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for d in range(n):
                    low[a, b, c, d] = sum(g[a, e] * R[e, b, c, d] for e in range(n))
    ric = sp.Matrix(n, n, lambda b, d: sum(R[a, b, a, d] for a in range(n)))
    scal = sum(ginv[b, d] * ric[b, d] for b in range(n) for d in range(n))
    f_gam = sp.lambdify(x, gam, "numpy")
    f_low = sp.lambdify(x, low.tolist(), "numpy")
    f_ric = sp.lambdify(x, ric, "numpy")
    f_scal = sp.lambdify(x, scal, "numpy")
    return f_gam, f_low, f_ric, f_scal


def curvature(metric_rows, point):
    """(Γ, R_abcd, Ricci, scalar) at ``point`` for a metric given as strings."""
    n = len(metric_rows)
    key = tuple(tuple(str(e) for e in row) for row in metric_rows)
    fg, fr, fric, fs = _symbolic_curvature(key, n)
    p = [float(v) for v in point]
    return (np.array(fg(*p), float), np.array(fr(*p), float),
            np.array(fric(*p), float), float(fs(*p)))


def conformal_metric(phi: str, n=3):
    return [[f"exp(2*({phi}))" if i == j else "0" for j in range(n)] for i in range(n)]


def bessel_j0(x, terms=60):
    """J₀ by its power series, summed with fsum."""
    return math.fsum((-1) ** k * (x / 2) ** (2 * k) / math.factorial(k) ** 2 for k in range(terms))


def bisect(fun, lo, hi, tol=1e-15, iters=200):
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def bessel_j0_first_zero():
    return bisect(bessel_j0, 2.0, 3.0)


def cubic_inverse(v):
    """Real root of s³ + s = v by bisection (the map is strictly increasing)."""
    b = 1.0 + abs(v)
    return bisect(lambda s: s**3 + s - v, -b, b)

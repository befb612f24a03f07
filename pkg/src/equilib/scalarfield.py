"""Scalar fields with derivative jets to third order, and domain sampling."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import sympy as sp
from scipy.stats import qmc

from ._symbolic import CompiledJet, coordinate_symbols, parse_expression
from .errors import DomainError, EverywhereCriticalError, FieldEvaluationError

FD_STEP = 1e-2
_T = sp.Symbol("t", real=True)


@dataclass
class Jet3:
    """Batch of jets: value (N,), grad (N,n), hess (N,n,n), third (N,n,n,n)."""

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray | None = None

    def __len__(self):
        return self.value.shape[0]

    def __getitem__(self, idx):
        third = None if self.third is None else self.third[idx]
        return Jet3(self.value[idx], self.grad[idx], self.hess[idx], third)

    def symmetrized(self) -> "Jet3":
        hess = 0.5 * (self.hess + np.swapaxes(self.hess, -1, -2))
        third = self.third
        if third is not None:
            perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
            lead = third.ndim - 3
            axes = [tuple(range(lead)) + tuple(lead + p for p in perm) for perm in perms]
            third = sum(np.transpose(third, ax) for ax in axes) / 6.0
        return Jet3(self.value, self.grad, hess, third)


def _central4(fun, points, h):
    """4th-order central difference of ``fun`` along every axis.

    ``fun(points)`` returns an array with leading axis N; the derivative
    index is appended last.
    """
    n = points.shape[1]
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        d = (fun(points - 2 * e) - 8 * fun(points - e) + 8 * fun(points + e)
             - fun(points + 2 * e)) / (12 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


class ScalarFieldSpec:
    """A scalar field on coordinates ``x1..xn``.

    Either a sympy expression (analytic jets) or a plain callable (finite
    difference jets with 4th-order stencils). Optional analytic ``grad``
    and ``hess`` callables let a numeric field supply part of the jet.
    """

    def __init__(self, n: int, label: str = "", expr: sp.Expr | None = None,
                 func: Callable | None = None, grad: Callable | None = None,
                 hess: Callable | None = None, fd_step: float = FD_STEP,
                 jet_fn: Callable | None = None):
        if expr is None and func is None and jet_fn is None:
            raise ValueError("need an expression, a callable or a jet function")
        self.n = n
        self.label = label
        self.expr = expr
        self.fd_step = fd_step
        self._func = func
        self._grad = grad
        self._hess = hess
        self._jet_fn = jet_fn
        self._compiled = None
        if expr is not None:
            self._compiled = CompiledJet(expr, coordinate_symbols(n), order=3)

    @property
    def analytic(self) -> bool:
        return self._compiled is not None or self._jet_fn is not None

    @classmethod
    def from_sympy(cls, expr, n: int, label: str = "") -> "ScalarFieldSpec":
        return cls(n, label or str(expr), expr=sp.sympify(expr))

    @classmethod
    def from_expr(cls, text: str, n: int, label: str = "") -> "ScalarFieldSpec":
        return cls.from_sympy(parse_expression(text, n), n, label or text)

    @classmethod
    def from_callable(cls, func, n: int, label: str = "", grad=None, hess=None,
                      fd_step: float = FD_STEP) -> "ScalarFieldSpec":
        return cls(n, label, func=func, grad=grad, hess=hess, fd_step=fd_step)

    def compose(self, profile: str | sp.Expr, label: str = "") -> "ScalarFieldSpec":
        """Return ``profile(f)`` where ``profile`` is an expression in ``t``."""
        if self.expr is None:
            raise ValueError("composition needs a symbolic field")
        tau = parse_expression(profile, 0, extra={"t": _T}) if isinstance(profile, str) else profile
        return ScalarFieldSpec.from_sympy(tau.subs(_T, self.expr), self.n,
                                          label or f"({profile})∘{self.label}")

    def symbols(self):
        return coordinate_symbols(self.n)

    def _as_points(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.n:
            raise DomainError(f"expected points of dimension {self.n}, got {pts.shape[-1]}")
        return pts

    def value(self, points) -> np.ndarray:
        pts = self._as_points(points)
        if self._compiled is not None:
            return self._compiled.value(pts)
        if self._jet_fn is not None:
            return self._jet_fn(pts, 0).value
        with np.errstate(all="ignore"):
            return np.asarray(self._func(pts), dtype=float).reshape(pts.shape[0])

    def __call__(self, points):
        return self.value(points)

    def _fd_grad(self, pts):
        if self._grad is not None:
            return np.asarray(self._grad(pts), dtype=float)
        return _central4(self.value, pts, self.fd_step)

    def _fd_hess(self, pts):
        if self._hess is not None:
            return np.asarray(self._hess(pts), dtype=float)
        return _central4(self._fd_grad, pts, self.fd_step)

    def jets(self, points, order: int = 3) -> Jet3:
        pts = self._as_points(points)
        if self._compiled is not None:
            parts = self._compiled.evaluate(pts, order=order)
            while len(parts) < 4:
                parts.append(None)
            jet = Jet3(*parts)
        elif self._jet_fn is not None:
            jet = self._jet_fn(pts, order)
        else:
            value = self.value(pts)
            grad = self._fd_grad(pts)
            hess = self._fd_hess(pts) if order >= 2 else None
            third = _central4(self._fd_hess, pts, self.fd_step) if order >= 3 else None
            jet = Jet3(value, grad, hess, third)
            if hess is not None:
                jet = jet.symmetrized()
        arrays = [a for a in (jet.value, jet.grad, jet.hess, jet.third)[:order + 1] if a is not None]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            bad = ~np.isfinite(jet.value) | ~np.all(np.isfinite(jet.grad), axis=-1)
            where = pts[np.argmax(bad)] if bad.any() else pts[0]
            raise FieldEvaluationError(f"non-finite jet for field {self.label!r} near {where.tolist()}")
        return jet

    def __repr__(self):
        return f"ScalarFieldSpec({self.label!r}, n={self.n})"


def jet_at(fld: ScalarFieldSpec, point, chart=None) -> Jet3:
    """Jet of ``fld`` at a single point (non-batched arrays)."""
    pt = np.asarray(point, dtype=float)
    if chart is not None:
        chart.check_points(pt[None, :])
    return fld.jets(pt[None, :])[0]


@dataclass
class SampleCloud:
    points: np.ndarray
    exclusion_radius: float = 0.0
    eps_grad: float = 0.0
    seed: int = 0
    candidates: int = 0
    info: dict = dc_field(default_factory=dict)

    def __len__(self):
        return self.points.shape[0]

    def verify(self, chart, fld: ScalarFieldSpec) -> bool:
        lo, hi = chart.domain[:, 0], chart.domain[:, 1]
        inside = np.all((self.points >= lo + self.exclusion_radius)
                        & (self.points <= hi - self.exclusion_radius))
        jet = fld.jets(self.points, order=1)
        norm = np.sqrt(chart.grad_norm_sq(self.points, jet.grad))
        return bool(inside and np.all(norm >= self.eps_grad))


def sample_domain(chart, fld: ScalarFieldSpec, count: int, eps_grad: float = 1e-6,
                  seed: int = 0, exclusion_radius: float = 0.0, box=None,
                  region: Callable | None = None) -> SampleCloud:
    """Scrambled-Halton points in the chart box with ‖∇f‖_g ≥ eps_grad.

    ``box`` overrides the sampling box (clipped to the chart domain) and
    ``region`` is an optional extra acceptance mask on points.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    dom = np.asarray(chart.domain, dtype=float)
    if box is not None:
        box = np.asarray(box, dtype=float)
        dom = np.stack([np.maximum(dom[:, 0], box[:, 0]), np.minimum(dom[:, 1], box[:, 1])], axis=1)
    lo = dom[:, 0] + exclusion_radius
    hi = dom[:, 1] - exclusion_radius
    if np.any(hi <= lo):
        raise DomainError("sampling box is empty after exclusion")
    sampler = qmc.Halton(d=chart.n, scramble=True, seed=seed)
    accepted, drawn = [], 0
    limit = 100 * count
    batch = max(count, 256)
    n_acc = 0
    while n_acc < count and drawn < limit:
        cand = qmc.scale(sampler.random(batch), lo, hi)
        drawn += batch
        keep = chart.contains(cand)
        if region is not None:
            keep &= np.asarray(region(cand), dtype=bool)
        if keep.any():
            with np.errstate(all="ignore"):
                keep[keep] &= np.isfinite(fld.value(cand[keep]))
        if keep.any():
            sub = cand[keep]
            grad = fld.jets(sub, order=1).grad
            with np.errstate(all="ignore"):
                norm = np.sqrt(chart.grad_norm_sq(sub, grad))
            good = np.isfinite(norm) & (norm >= eps_grad)
            accepted.append(sub[good])
            n_acc += int(good.sum())
    if n_acc < count:
        raise EverywhereCriticalError(
            f"only {n_acc} of {drawn} candidates have gradient norm >= {eps_grad}; "
            "the field is likely constant on the sampled region")
    pts = np.concatenate(accepted)[:count]
    return SampleCloud(pts, exclusion_radius, eps_grad, seed, drawn)


# catalog -------------------------------------------------------------------

def _example_4_2(n):
    x = coordinate_symbols(n)
    f = sum(s**2 for s in x) - 1
    return sp.Piecewise((f, sp.Eq(f, 0)), (f + f * sp.exp(-1 / f**2), True))


def _example_4_3(n):
    x = coordinate_symbols(n)
    if n < 2:
        raise ValueError("example_4_3 needs n >= 2")
    return sp.Piecewise((x[0] * (1 + x[1] * sp.exp(-1 / x[0]**2)), x[0] > 0), (x[0], True))


def _example_4_4(n):
    if n != 2:
        raise ValueError("example_4_4 is defined on R^2")
    x, y = coordinate_symbols(2)
    r = sp.sqrt(x**2 + y**2)
    # the defect branch is strict so that the unit circle sits on the analytic side
    return sp.Piecewise((1 - r**2 + (y / r) * sp.exp(-1 / (1 - r)**2), r > 1), (1 - r**2, True))


def catalog_field(name: str, n: int, params: dict | None = None) -> ScalarFieldSpec:
    """Build a named catalog field."""
    params = params or {}
    x = coordinate_symbols(n)
    if name == "norm_sq":
        return ScalarFieldSpec.from_sympy(sum(s**2 for s in x), n, "norm_sq")
    if name == "linear":
        a = params.get("a", [1.0] + [0.0] * (n - 1))
        if len(a) != n:
            raise ValueError(f"linear: coefficient vector must have length {n}")
        expr = sum(sp.nsimplify(ai) * s for ai, s in zip(a, x))
        return ScalarFieldSpec.from_sympy(expr, n, f"linear({list(a)})")
    if name == "cyl_r2":
        if n < 2:
            raise ValueError("cyl_r2 needs n >= 2")
        return ScalarFieldSpec.from_sympy(x[0]**2 + x[1]**2, n, "cyl_r2")
    if name == "example_4_2":
        return ScalarFieldSpec.from_sympy(_example_4_2(n), n, "example_4_2")
    if name == "example_4_3":
        return ScalarFieldSpec.from_sympy(_example_4_3(n), n, "example_4_3")
    if name == "example_4_4":
        return ScalarFieldSpec.from_sympy(_example_4_4(n), n, "example_4_4")
    if name == "expr":
        if "expr" not in params:
            raise ValueError("expr field needs an 'expr' string")
        return ScalarFieldSpec.from_expr(params["expr"], n)
    raise ValueError(f"unknown catalog field {name!r}")


CATALOG_NAMES = ("norm_sq", "linear", "cyl_r2", "example_4_2", "example_4_3",
                 "example_4_4", "expr")


def field_from_descriptor(desc, n: int) -> ScalarFieldSpec:
    """Accepts ``"norm_sq"``, ``"linear(1,0,0)"``, or a dict with name/params."""
    if isinstance(desc, str):
        s = desc.strip()
        if s.startswith("linear(") and s.endswith(")"):
            a = [float(v) for v in s[len("linear("):-1].split(",")]
            return catalog_field("linear", n, {"a": a})
        if s in CATALOG_NAMES:
            return catalog_field(s, n)
        return ScalarFieldSpec.from_expr(s, n)
    desc = dict(desc)
    name = desc.get("name", "expr")
    params = dict(desc.get("params", {}))
    if "expr" in desc:
        params["expr"] = desc["expr"]
    fld = catalog_field(name, n, params)
    profile = desc.get("profile")
    if profile:
        fld = fld.compose(profile)
    if "label" in desc:
        fld.label = desc["label"]
    return fld

"""Heuristic detection of one-sided flat (C^∞, non-analytic) defects along a
line transversal to a level set.

The restriction y(t) = g(p + t u) is fitted by one-sided polynomials on
geometrically shrinking windows around t = 0. A flat defect such as
exp(−1/t²) is invisible on small windows, so both sides share the same
Taylor coefficients there; on larger windows the defect side carries a
residual whose log-log slope grows without bound as t → 0, while a
polynomial remainder of an analytic function approaches a fixed slope.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GeometryError, NearCriticalError, RangeMismatchError, UnsupportedError
from .geometry import MetricChart
from .scalarfield import ScalarFieldSpec

COEF_TOL = 1e-8
FIT_RMS_TOL = 1e-12
MIN_MATCHED = 3


@dataclass
class TransversalTrace:
    point: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    values: np.ndarray
    level: float
    half_width: float
    evaluate: Callable | None = dc_field(default=None, repr=False)
    warnings: list = dc_field(default_factory=list)

    @property
    def count(self) -> int:
        return self.t.size

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        if self.evaluate is not None:
            return self.evaluate(t)
        return np.interp(t, self.t, self.values)

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "direction": self.direction.tolist(),
                "half_width": self.half_width, "count": self.count, "level": self.level,
                "warnings": self.warnings}


def trace_transversal(g: ScalarFieldSpec, chart: MetricChart, boundary_point, half_width: float = 0.5,
                      count: int = 401, eps_grad: float = 1e-8) -> TransversalTrace:
    """Sample g along the straight normal line through ``boundary_point``."""
    if not chart.flat:
        raise UnsupportedError("transversal traces are defined on flat charts")
    p = np.asarray(boundary_point, float)
    chart.check_points(p[None])
    grad = g.jets(p[None], order=1).grad[0]
    gn = np.linalg.norm(grad)
    if gn < eps_grad:
        raise NearCriticalError(f"‖∇g‖ = {gn:.3e} at the boundary point")
    u = grad / gn
    h = float(half_width)
    lo, hi = chart.domain[:, 0], chart.domain[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(u > 0, (hi - p) / u, np.where(u < 0, (lo - p) / u, np.inf))
        t_lo = np.where(u > 0, (p - lo) / u, np.where(u < 0, (p - hi) / u, np.inf))
    reach = float(min(t_hi.min(), t_lo.min()))
    notes = []
    if reach < h:
        notes.append(f"trace shortened from half-width {h} to {reach:.6g} (line exits the chart)")
        warnings.warn(notes[-1])
        h = reach
    if count % 2 == 0:
        count += 1
    t = np.linspace(-h, h, count)
    t[count // 2] = 0.0

    def evaluate(tt, _p=p, _u=u):
        tt = np.atleast_1d(np.asarray(tt, float))
        return g.value(_p[None, :] + tt[:, None] * _u[None, :])

    y = evaluate(t)
    return TransversalTrace(p, u, t, y, float(y[count // 2]), h, evaluate, notes)


@dataclass
class AnalyticityVerdict:
    verdict: str
    matched_order: int
    flatness_exponent: dict
    side: str | None
    reason: str = ""
    side_point: list | None = None
    coefficients: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _one_sided_fit(trace, w, degree, sign, npts):
    # Chebyshev-distributed nodes on the half window, power basis in s = t/w
    k = np.arange(npts)
    s = 0.5 * (1 - np.cos(np.pi * (k + 0.5) / npts))
    t = sign * s * w
    y = trace.at(t)
    V = np.vander(sign * s, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    rms = float(np.sqrt(np.mean((V @ coef - y) ** 2)))
    return coef, rms, float(np.max(np.abs(y)))


def _matched(cp, cm, scale, tol):
    m = -1
    for k in range(cp.size):
        if abs(cp[k] - cm[k]) <= tol * scale:
            m = k
        else:
            break
    return m


def _flat_slope(logt, logr):
    """LSQ slope and whether the local slope grows toward t → 0."""
    A = np.stack([np.ones_like(logt), logt], axis=1)
    slope = float(np.linalg.lstsq(A, logr, rcond=None)[0][1])
    half = logt.size // 2
    def seg(a, b):
        return float(np.polyfit(a, b, 1)[0]) if a.size >= 2 and np.ptp(a) > 0 else np.nan
    # logt is ordered from large t to small t
    outer = seg(logt[:half + 1], logr[:half + 1])
    inner = seg(logt[half:], logr[half:])
    growing = bool(np.isfinite(outer) and np.isfinite(inner) and inner >= outer)
    return slope, growing, outer, inner


def analyticity_diagnostic(trace: TransversalTrace, max_order: int = 8, coef_tol: float = COEF_TOL,
                           points_per_octave: int = 16, slope_points: int = 12) -> AnalyticityVerdict:
    """Classify the trace as candidate-analytic, flat-defect or inconclusive."""
    K = int(max_order)
    if trace.count < 8 * K:
        raise GeometryError(f"trace has {trace.count} samples; need at least {8 * K}")
    d = np.diff(trace.values)
    if not (np.all(d > 0) or np.all(d < 0)):
        return AnalyticityVerdict("inconclusive", -1, {}, None, "trace is not monotone")
    h = trace.half_width
    npts = 8 * K
    windows = [h * 2.0 ** (-j) for j in range(0, 64) if h * 2.0 ** (-j) >= 1e-3 * h * (1 - 1e-12)]
    fits = []
    for w in windows:
        cp, rp, sp_ = _one_sided_fit(trace, w, K, +1, npts)
        cm, rm, sm = _one_sided_fit(trace, w, K, -1, npts)
        scale = max(sp_, sm, 1e-300)
        fits.append({"w": w, "cp": cp, "cm": cm, "rms": max(rp, rm), "scale": scale,
                     "matched": _matched(cp, cm, scale, coef_tol)})
    smallest = fits[-1]
    m_star = int(smallest["matched"])
    coef_table = {"window": smallest["w"], "plus": smallest["cp"].tolist(), "minus": smallest["cm"].tolist()}
    if m_star < MIN_MATCHED:
        return AnalyticityVerdict("inconclusive", m_star, {}, None,
                                  f"one-sided derivatives agree only to order {m_star}",
                                  coefficients=coef_table)
    # one-sided fit residual as a function of the window width, on a fine
    # geometric grid; an analytic side decays like w^(m*+1), a flat side faster
    # than any power with a local slope that keeps growing as w -> 0
    noise = max(fits[-1]["rms"], 1e-300)
    scale = float(np.max(np.abs(trace.values)))
    floor = max(1e-13 * scale, 10 * noise)
    jmax = int(np.ceil(points_per_octave * np.log2(1e3)))
    wg = h * 2.0 ** (-np.arange(jmax + 1) / points_per_octave)
    expo, flat, detail = {}, {}, {}
    for name, sign in (("plus", 1.0), ("minus", -1.0)):
        r = np.array([_one_sided_fit(trace, w, m_star, sign, npts)[1] for w in wg])
        sel = np.nonzero(r > 100 * floor)[0]
        if sel.size < 3:
            expo[name] = None
            flat[name] = False
            continue
        sel = sel[-slope_points:]  # the smallest resolved windows carry the sharpest evidence
        slope, growing, outer, inner = _flat_slope(np.log(wg[sel]), np.log(r[sel]))
        expo[name] = slope
        detail[name] = {"outer_slope": outer, "inner_slope": inner, "points": int(sel.size)}
        flat[name] = bool(slope > m_star + 2 and growing)
    expo["detail"] = detail
    sides = [s for s in ("plus", "minus") if flat[s]]
    if len(sides) == 1:
        side = sides[0]
        sgn = 1.0 if side == "plus" else -1.0
        sp_pt = (trace.point + sgn * 0.5 * h * trace.direction).tolist()
        label = "t>0 (along ∇g)" if side == "plus" else "t<0 (against ∇g)"
        return AnalyticityVerdict("flat-defect", m_star, expo, label,
                                  "super-polynomial one-sided residual", sp_pt, coef_table)
    reason = "no one-sided flat residual" if not sides else "flat residual on both sides (symmetric)"
    return AnalyticityVerdict("candidate-analytic", m_star, expo, None, reason, None, coef_table)


def reparameterize(trace_i: TransversalTrace, trace_j: TransversalTrace):
    """Monotone tabulated τ with τ(j∘γ(t)) = i∘γ(t), as a cubic spline."""
    if trace_i.t.shape != trace_j.t.shape or np.abs(trace_i.t - trace_j.t).max() > 1e-12 \
            or np.abs(trace_i.point - trace_j.point).max() > 1e-12:
        raise RangeMismatchError("traces do not share the same transversal and parameter grid")
    yi, yj = trace_i.values, trace_j.values
    for y in (yi, yj):
        d = np.diff(y)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise RangeMismatchError("trace is not monotone")
    order = np.argsort(yj)
    spline = CubicSpline(yj[order], yi[order])
    lo, hi = yj.min(), yj.max()

    def tau(s):
        s = np.asarray(s, float)
        if np.any((s < lo - 1e-12 * max(1, abs(lo))) | (s > hi + 1e-12 * max(1, abs(hi)))):
            raise RangeMismatchError(f"value outside the tabulated range [{lo}, {hi}]")
        return spline(s)
    tau.spline = spline
    tau.range = (float(lo), float(hi))
    return tau

"""Fibrewise agreement, the equilibrium-function rank test, profile recovery
and residuals of the free-boundary system on a grid."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import (
    GeometryError,
    InsufficientSamplingError,
    UnsupportedDimensionError,
)
from .geometry import MetricChart, derived_fields, local_geometry
from .scalarfield import SampleCloud, ScalarFieldSpec

DEFAULT_TOL = 1e-6
DEFAULT_TOL_FD = 1e-3


@dataclass
class FibrewiseReport:
    passed: bool
    max_rank_ratio: float
    worst_point: list
    fraction_failing: float
    tol: float
    ratios: np.ndarray = dc_field(repr=False, default=None)
    rank: int = 1

    def to_dict(self) -> dict:
        return {"pass": self.passed, "max_rank_ratio": self.max_rank_ratio,
                "worst_point": self.worst_point, "fraction_failing": self.fraction_failing,
                "tol": self.tol, "rank": self.rank, "samples": int(len(self.ratios))}


def rank_ratios(rows: np.ndarray, rank: int, eps_grad: float) -> np.ndarray:
    """σ_{rank+1}/max(σ₁, eps) of row-normalized gradient stacks.

    ``rows`` has shape (N, k, n). Each row is divided by max(‖row‖, eps_grad)
    so the ratio measures the angle between gradient directions and does not
    depend on the relative size of the stacked scalars.
    """
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    scaled = rows / np.maximum(norms, eps_grad)
    sv = np.linalg.svd(scaled, compute_uv=False)
    if sv.shape[-1] <= rank:
        return np.zeros(rows.shape[0])
    return sv[:, rank] / np.maximum(sv[:, 0], eps_grad)


def _report(ratios, points, tol, rank) -> FibrewiseReport:
    if ratios.size == 0:
        raise InsufficientSamplingError("empty sample cloud")
    failing = ratios > tol
    worst = int(np.argmax(ratios))
    return FibrewiseReport(passed=not failing.any(), max_rank_ratio=float(ratios[worst]),
                           worst_point=points[worst].tolist(),
                           fraction_failing=float(failing.mean()), tol=tol, ratios=ratios,
                           rank=rank)


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, SampleCloud) else np.atleast_2d(np.asarray(cloud, float))
    if pts.shape[0] == 0:
        raise InsufficientSamplingError("empty sample cloud")
    return pts


def _eps(cloud, eps_grad):
    if eps_grad is not None:
        return eps_grad
    if isinstance(cloud, SampleCloud) and cloud.eps_grad > 0:
        return cloud.eps_grad
    return 1e-12


def fibrewise_agree(f: ScalarFieldSpec, g: ScalarFieldSpec, chart: MetricChart, cloud,
                    tol: float = DEFAULT_TOL, eps_grad: float | None = None) -> FibrewiseReport:
    """Rank ≤ 1 test of the stacked coordinate gradients of f and g."""
    pts = _points(cloud)
    chart.check_points(pts)
    rows = np.stack([f.jets(pts, order=1).grad, g.jets(pts, order=1).grad], axis=1)
    return _report(rank_ratios(rows, 1, _eps(cloud, eps_grad)), pts, tol, 1)


def gradient_rows(f: ScalarFieldSpec, chart: MetricChart, pts: np.ndarray) -> np.ndarray:
    """Coordinate gradients of (f, ‖∇f‖², Δf), shape (N, 3, n)."""
    jet = f.jets(pts, order=3)
    d = derived_fields(chart, jet, pts)
    return np.stack([jet.grad, d.du2, d.du3], axis=1)


def m_equilibrium_test(fields: list, chart: MetricChart, cloud, tol: float = DEFAULT_TOL,
                       eps_grad: float | None = None) -> FibrewiseReport:
    """Rank ≤ m of the 3m stacked gradients (each fᵢ, ‖∇fᵢ‖², Δfᵢ)."""
    m = len(fields)
    if m < 1:
        raise ValueError("need at least one field")
    if m >= chart.n:
        raise UnsupportedDimensionError(f"m = {m} must be smaller than the dimension {chart.n}")
    pts = _points(cloud)
    chart.check_points(pts)
    rows = np.concatenate([gradient_rows(f, chart, pts) for f in fields], axis=1)
    return _report(rank_ratios(rows, m, _eps(cloud, eps_grad)), pts, tol, m)


def equilibrium_test(f: ScalarFieldSpec, chart: MetricChart, cloud, tol: float | None = None,
                     eps_grad: float | None = None) -> FibrewiseReport:
    """f, ‖∇f‖² and Δf agree fibrewise at every sample."""
    if tol is None:
        tol = DEFAULT_TOL if (f.analytic and chart.analytic) else DEFAULT_TOL_FD
    return m_equilibrium_test([f], chart, cloud, tol, eps_grad)


# profiles ------------------------------------------------------------------

def _detrended_cv(x, y, scale, degree=2):
    """Relative rms deviation of y from its least-squares polynomial in x.

    Returns (cv, value at mean(x), slope at mean(x)).
    """
    xc = x - x.mean()
    deg = min(degree, np.unique(x).size - 1)
    if deg >= 1:
        A = np.vander(xc, deg + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        value, slope = coef[0], coef[1]
    else:
        resid = y - y.mean()
        value, slope = y.mean(), 0.0
    rms = np.sqrt(np.mean(resid**2))
    return rms / max(abs(value), scale), value, slope


@dataclass
class EquilibriumProfile:
    levels: np.ndarray
    omega: np.ndarray
    omega_cv: np.ndarray
    psi: np.ndarray
    psi_cv: np.ndarray
    omega_prime: np.ndarray
    omega_slope: np.ndarray
    precondition_ok: bool = True
    counts: np.ndarray = None
    f_range: tuple = (np.nan, np.nan)

    def covers(self, c1: float, c2: float) -> bool:
        """True when [c1, c2] lies within the sampled range, extended by one bin."""
        width = (self.f_range[1] - self.f_range[0]) / max(len(self.levels), 1)
        return self.f_range[0] - width <= c1 and c2 <= self.f_range[1] + width

    def interp(self, level: float):
        """(ω, ψ, ω′) interpolated at ``level``."""
        lv = self.levels
        if not (lv[0] <= level <= lv[-1]):
            raise ValueError(f"level {level} outside the profile range [{lv[0]}, {lv[-1]}]")
        return (float(np.interp(level, lv, self.omega)), float(np.interp(level, lv, self.psi)),
                float(np.interp(level, lv, self.omega_prime)))

    def to_dict(self) -> dict:
        return {"levels": self.levels.tolist(), "omega": self.omega.tolist(),
                "omega_cv": self.omega_cv.tolist(), "psi": self.psi.tolist(),
                "psi_cv": self.psi_cv.tolist(), "omega_prime": self.omega_prime.tolist(),
                "precondition_ok": self.precondition_ok}


def recover_profiles(f: ScalarFieldSpec, chart: MetricChart, cloud, bins: int = 32,
                     tol: float | None = None) -> EquilibriumProfile:
    """Bin samples by f into equal-count bins and tabulate ω = ‖∇f‖², ψ = Δf.

    The within-bin CV is measured about a least-squares quadratic in f,
    since ω and ψ legitimately vary across the width of a bin; the bin
    value is that quadratic evaluated at the bin's mean level.
    """
    pts = _points(cloud)
    if pts.shape[0] < 3 * bins:
        raise InsufficientSamplingError(f"{pts.shape[0]} samples is fewer than 3 per bin for {bins} bins")
    ok = equilibrium_test(f, chart, pts, tol).passed
    jet = f.jets(pts, order=3)
    d = derived_fields(chart, jet, pts)
    order = np.argsort(jet.value, kind="stable")
    fv, om, ps = jet.value[order], d.u2[order], d.u3[order]
    scale_o = 1e-12 * max(np.abs(om).max(), 1.0)
    scale_p = 1e-12 * max(np.abs(ps).max(), 1.0)
    levels, omega, ocv, psi, pcv, oslope, counts = [], [], [], [], [], [], []
    for idx in np.array_split(np.arange(fv.size), bins):
        x = fv[idx]
        cv_o, mo, so = _detrended_cv(x, om[idx], scale_o)
        cv_p, mp, _ = _detrended_cv(x, ps[idx], scale_p)
        levels.append(x.mean())
        omega.append(mo)
        ocv.append(cv_o)
        psi.append(mp)
        pcv.append(cv_p)
        oslope.append(so)
        counts.append(idx.size)
    levels = np.array(levels)
    omega = np.array(omega)
    if np.any(np.diff(levels) <= 0):
        raise InsufficientSamplingError("bins collapse onto a single level; f is nearly constant on the cloud")
    return EquilibriumProfile(levels, omega, np.array(ocv), np.array(psi), np.array(pcv),
                              np.gradient(omega, levels), np.array(oslope), ok, np.array(counts),
                              (float(fv[0]), float(fv[-1])))


# free-boundary residuals ---------------------------------------------------

@dataclass
class P1ProblemSpec:
    F: Callable  # F(f1, f2, f3)
    G: Callable  # G(f2, f3)
    H: Callable  # H(f1)
    omega_mask: Callable  # points -> bool
    boundary_level: float
    allow_unbounded: bool = False


def _norms(v, mask=None, weights=None):
    if mask is not None:
        v = v[mask]
    if v.size == 0:
        return {"sup": 0.0, "l2": 0.0}
    return {"sup": float(np.max(np.abs(v))), "l2": float(np.sqrt(np.mean(v**2)))}


def _g_partials(G, f2, f3):
    h2 = 1e-6 * max(np.abs(f2).max(), 1.0)
    h3 = 1e-6 * max(np.abs(f3).max(), 1.0)
    d2 = (G(f2 + h2, f3) - G(f2 - h2, f3)) / (2 * h2)
    d3 = (G(f2, f3 + h3) - G(f2, f3 - h3)) / (2 * h3)
    return np.asarray(d2, float), np.asarray(d3, float)


def _boundary_points(mask_fn, axes, mask):
    """Locate ∂Ω by bisection on every grid edge whose endpoints straddle it."""
    grids = np.meshgrid(*axes, indexing="ij")
    found = []
    for k in range(len(axes)):
        a = [slice(None)] * len(axes)
        b = [slice(None)] * len(axes)
        a[k] = slice(0, -1)
        b[k] = slice(1, None)
        flip = mask[tuple(a)] != mask[tuple(b)]
        if not flip.any():
            continue
        p0 = np.stack([g[tuple(a)][flip] for g in grids], axis=-1)
        p1 = np.stack([g[tuple(b)][flip] for g in grids], axis=-1)
        in0 = mask[tuple(a)][flip]
        lo, hi = np.where(in0[:, None], p0, p1), np.where(in0[:, None], p1, p0)
        for _ in range(45):
            mid = 0.5 * (lo + hi)
            inside = np.asarray(mask_fn(mid), bool)
            lo = np.where(inside[:, None], mid, lo)
            hi = np.where(inside[:, None], hi, mid)
        found.append(0.5 * (lo + hi))
    return np.concatenate(found) if found else np.zeros((0, len(axes)))


def _erode(mask):
    out = mask.copy()
    for k in range(mask.ndim):
        for shift in (1, -1):
            rolled = np.roll(mask, shift, axis=k)
            edge = [slice(None)] * mask.ndim
            edge[k] = 0 if shift == 1 else -1
            rolled[tuple(edge)] = mask[tuple(edge)]
            out &= rolled
    return out


def p1_residuals(f1: ScalarFieldSpec, f2: ScalarFieldSpec, f3: ScalarFieldSpec,
                 spec: P1ProblemSpec, chart: MetricChart, grid, eps_grad: float = 1e-8,
                 tol: float = DEFAULT_TOL) -> dict:
    """Residuals of the free-boundary system on a tensor grid.

    ``grid`` is a list of 1-D coordinate arrays (one per axis). Interior
    residuals are taken on Ω with one layer of cells next to ∂Ω removed
    (jets of a C¹-matched solution jump there); the exterior residual on
    the complement of the closure, likewise eroded.
    """
    axes = [np.asarray(a, float) for a in grid]
    if len(axes) != chart.n:
        raise GeometryError("grid dimension does not match the chart")
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = mesh.shape[:-1]
    pts = mesh.reshape(-1, chart.n)
    mask = np.asarray(spec.omega_mask(pts), bool).reshape(shape)
    if not mask.any():
        raise GeometryError("Ω is empty on the grid")
    touches = any(np.take(mask, idx, axis=k).any() for k in range(chart.n) for idx in (0, -1))
    if touches and not spec.allow_unbounded:
        raise GeometryError("Ω touches the grid boundary")
    inner = _erode(mask).reshape(-1)
    outer = _erode(~mask).reshape(-1)

    loc = local_geometry(chart, pts, second=False)
    j1 = f1.jets(pts, order=2)
    v1, v2, v3 = j1.value, f2.value(pts), f3.value(pts)
    lap1 = np.einsum("nab,nab->n", loc.ginv, j1.hess - np.einsum("nkab,nk->nab", loc.gamma, j1.grad))
    report = {}
    with np.errstate(all="ignore"):
        r_lap = lap1 - np.asarray(spec.F(v1, v2, v3), float)
        g3 = f3.jets(pts, order=1).grad
        vec = np.asarray(spec.H(v1), float)[:, None] * g3 + np.asarray(spec.G(v2, v3), float)[:, None] * j1.grad
        r_euler = np.sqrt(np.einsum("nab,na,nb->n", loc.ginv, vec, vec))
    report["eq_interior_laplace"] = _norms(r_lap, inner)
    report["eq_interior_euler"] = _norms(r_euler, inner)
    report["eq_exterior_laplace"] = _norms(lap1, outer)

    bpts = _boundary_points(spec.omega_mask, axes, mask)
    if bpts.shape[0]:
        bj = f1.jets(bpts, order=1)
        report["boundary_level"] = _norms(bj.value - spec.boundary_level)
        gn = np.sqrt(chart.grad_norm_sq(bpts, bj.grad))
        report["boundary_grad_min"] = float(gn.min())
    else:
        report["boundary_level"] = {"sup": 0.0, "l2": 0.0}
        report["boundary_grad_min"] = None
    report["boundary_points"] = int(bpts.shape[0])

    ins = pts[inner]
    d2, d3 = _g_partials(spec.G, v2[inner], v3[inner]) if ins.shape[0] else (np.ones(1), np.ones(1))
    warnings = []
    if np.any(np.abs(d2) < 1e-12):
        warnings.append("∂G/∂f2 vanishes somewhere on Ω")
    if np.any(np.abs(d3) < 1e-12):
        warnings.append("∂G/∂f3 vanishes somewhere on Ω")
    if ins.shape[0] == 0 or np.ptp(v3[inner]) == 0:
        warnings.append("f3 is constant on Ω")
    if ins.shape[0] and not np.any(v2[inner] != 0):
        warnings.append("f2 vanishes identically on Ω")
    report["warnings"] = warnings

    # fibrewise agreement of (f1, f2, f3) where all three gradients are resolved
    if ins.shape[0]:
        g1 = j1.grad[inner]
        g2 = f2.jets(ins, order=1).grad
        keep = (np.linalg.norm(g1, axis=-1) > eps_grad)
        keep &= np.linalg.norm(g2, axis=-1) > eps_grad
        keep &= np.linalg.norm(g3[inner], axis=-1) > eps_grad
        if keep.any():
            rows = np.stack([g1[keep], g2[keep], g3[inner][keep]], axis=1)
            rep = _report(rank_ratios(rows, 1, eps_grad), ins[keep], tol, 1)
            report["fibrewise"] = rep.to_dict()
        else:
            report["fibrewise"] = None
    return report

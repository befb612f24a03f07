"""Riemannian charts, Christoffel symbols, curvature and intrinsic operators.

Index layout used throughout (leading batch axis N omitted):
``dg[i, j, k] = d_k g_ij``, ``d2g[i, j, k, l] = d_k d_l g_ij``,
``Gamma[a, b, c] = Γ^a_bc``. Riemann is stored fully covariant,
``R_abcd = g_ae R^e_bcd`` with
``R^a_bcd = d_c Γ^a_db - d_d Γ^a_cb + Γ^a_ce Γ^e_db - Γ^a_de Γ^e_cb``,
Ricci ``R_bd = R^a_bad``. With this choice the round sphere has positive
curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from ._symbolic import CompiledMatrixJet, coordinate_symbols, parse_expression
from .errors import (
    DegenerateMetricError,
    DegeneratePlaneError,
    DomainError,
    UnsupportedDimensionError,
)
from .scalarfield import Jet3, ScalarFieldSpec, _central4, field_from_descriptor

KINDS = ("euclidean", "conformally_flat", "stereographic_sphere", "poincare_ball",
         "product", "schwarzschild", "user")


class MetricChart:
    """Coordinate box with a metric and its first two derivatives.

    Built-in kinds get analytic jets. A user metric (callable returning
    ``(N, n, n)``) falls back to 4th-order central differences with step
    ``extent * 1e-3``.
    """

    def __init__(self, n: int, domain, kind: str = "user", params: dict | None = None,
                 matrix: sp.Matrix | None = None, metric_fn=None, phi: ScalarFieldSpec | None = None,
                 valid=None, label: str = ""):
        if n < 2:
            raise UnsupportedDimensionError("charts need dimension n >= 2")
        self.n = n
        self.domain = np.asarray(domain, dtype=float).reshape(n, 2)
        if np.any(self.domain[:, 1] <= self.domain[:, 0]):
            raise DomainError("domain box has an empty side")
        self.kind = kind
        self.params = dict(params or {})
        self.label = label or kind
        self.phi = phi
        self._valid = valid
        self._mjet = CompiledMatrixJet(matrix, coordinate_symbols(n)) if matrix is not None else None
        self._metric_fn = metric_fn
        self.fd_step = float(np.max(self.domain[:, 1] - self.domain[:, 0])) * 1e-3
        self.matrix = matrix

    @property
    def flat(self) -> bool:
        return self.kind == "euclidean"

    @property
    def analytic(self) -> bool:
        return self.kind == "euclidean" or self._mjet is not None or (
            self.phi is not None and self.phi.analytic)

    def descriptor(self) -> dict:
        d = {"kind": self.kind, "dimension": self.n, "params": self.params,
             "domain": self.domain.tolist()}
        return d

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.all((pts >= self.domain[:, 0]) & (pts <= self.domain[:, 1]), axis=-1)
        if self._valid is not None:
            ok &= self._valid(pts)
        return ok

    def check_points(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.n:
            raise DomainError(f"point dimension {pts.shape[-1]} != chart dimension {self.n}")
        bad = ~self.contains(pts)
        if bad.any():
            raise DomainError(f"point {pts[np.argmax(bad)].tolist()} outside the chart domain")
        return pts

    # metric evaluation -----------------------------------------------------

    def metric(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        N, n = pts.shape[0], self.n
        if self.kind == "euclidean":
            return np.broadcast_to(np.eye(n), (N, n, n)).copy()
        if self.phi is not None:
            e2 = np.exp(2 * self.phi.value(pts))
            return e2[:, None, None] * np.eye(n)
        if self._mjet is not None:
            return self._mjet.metric(pts)
        return np.asarray(self._metric_fn(pts), dtype=float)

    def metric_jet(self, points):
        """Return ``(g, dg, d2g)`` at a batch of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        N, n = pts.shape[0], self.n
        if self.kind == "euclidean":
            return (np.broadcast_to(np.eye(n), (N, n, n)).copy(), np.zeros((N, n, n, n)),
                    np.zeros((N, n, n, n, n)))
        if self.phi is not None:
            jet = self.phi.jets(pts, order=2)
            e2 = np.exp(2 * jet.value)
            eye = np.eye(n)
            g = e2[:, None, None] * eye
            dg = 2 * e2[:, None, None, None] * eye[None, :, :, None] * jet.grad[:, None, None, :]
            second = 2 * jet.hess + 4 * jet.grad[:, :, None] * jet.grad[:, None, :]
            d2g = e2[:, None, None, None, None] * eye[None, :, :, None, None] * second[:, None, None]
            return g, dg, d2g
        if self._mjet is not None:
            return self._mjet.jet(pts)
        h = self.fd_step
        g = self.metric(pts)
        dg = _central4(self.metric, pts, h)
        d2g = _central4(lambda p: _central4(self.metric, p, h), pts, h)
        d2g = 0.5 * (d2g + np.swapaxes(d2g, -1, -2))
        return g, dg, d2g

    def inverse_metric(self, points) -> np.ndarray:
        return _safe_inv(self.metric(points))

    def grad_norm_sq(self, points, grad) -> np.ndarray:
        ginv = self.inverse_metric(points)
        return np.einsum("nab,na,nb->n", ginv, grad, grad)

    def __repr__(self):
        return f"MetricChart({self.label!r}, n={self.n})"


def _safe_inv(g):
    w = np.linalg.eigvalsh(g)
    if not np.all(np.isfinite(w)) or np.any(w[..., 0] <= 0):
        raise DegenerateMetricError("metric is not positive definite at some point")
    return np.linalg.inv(g)


# factories -----------------------------------------------------------------

def euclidean(n: int = 3, domain=None) -> MetricChart:
    dom = domain if domain is not None else [[-3.0, 3.0]] * n
    return MetricChart(n, dom, kind="euclidean", label=f"euclidean({n})")


def conformally_flat(phi, n: int = 3, domain=None) -> MetricChart:
    """``g = exp(2 phi) δ``; ``phi`` is a ScalarFieldSpec or expression string."""
    if isinstance(phi, str):
        phi_field = ScalarFieldSpec.from_expr(phi, n)
    elif isinstance(phi, ScalarFieldSpec):
        phi_field = phi
    else:
        phi_field = ScalarFieldSpec.from_sympy(phi, n)
    dom = domain if domain is not None else [[-3.0, 3.0]] * n
    return MetricChart(n, dom, kind="conformally_flat", params={"phi": phi_field.label},
                       phi=phi_field, label=f"conformally_flat({phi_field.label})")


def _conformal_factor(x, a, sign):
    r2 = sum(s**2 for s in x)
    return 4 * a**4 / (a**2 + sign * r2)**2


def stereographic_sphere(radius: float = 1.0, n: int = 3, domain=None) -> MetricChart:
    """Round n-sphere of the given radius, stereographic chart from the north pole."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = coordinate_symbols(n)
    a = sp.nsimplify(radius)
    lam = _conformal_factor(x, a, +1)
    w = 4 * radius
    dom = domain if domain is not None else [[-w, w]] * n
    return MetricChart(n, dom, kind="stereographic_sphere", params={"radius": radius},
                       matrix=lam * sp.eye(n), label=f"stereographic_sphere({radius})")


def poincare_ball(curvature: float = -1.0, n: int = 3, domain=None) -> MetricChart:
    """Hyperbolic space of constant curvature ``curvature < 0``, Poincaré ball chart."""
    if curvature >= 0:
        raise ValueError("poincare_ball needs negative curvature")
    a_num = 1.0 / np.sqrt(-curvature)
    x = coordinate_symbols(n)
    a = sp.nsimplify(a_num) if float(sp.nsimplify(a_num)) == a_num else sp.Float(a_num)
    lam = _conformal_factor(x, a, -1)
    w = 0.5 * a_num
    dom = domain if domain is not None else [[-w, w]] * n
    valid = lambda p: np.sum(p**2, axis=-1) < a_num**2
    return MetricChart(n, dom, kind="poincare_ball", params={"curvature": curvature},
                       matrix=lam * sp.eye(n), valid=valid, label=f"poincare_ball({curvature})")


def product(factor: str = "S2", radius: float = 1.0, domain=None) -> MetricChart:
    """S²×R or H²×R with a block-diagonal metric (factor chart plus a flat line)."""
    x, y, z = coordinate_symbols(3)
    if factor.upper() in ("S2", "S2XR"):
        a = sp.nsimplify(radius)
        lam = _conformal_factor((x, y), a, +1)
        w = 4 * radius
        valid = None
    elif factor.upper() in ("H2", "H2XR"):
        a = sp.nsimplify(radius)
        lam = _conformal_factor((x, y), a, -1)
        w = 0.6 * radius
        valid = lambda p: p[:, 0]**2 + p[:, 1]**2 < radius**2
    else:
        raise ValueError("product factor must be 'S2' or 'H2'")
    m = sp.diag(lam, lam, 1)
    dom = domain if domain is not None else [[-w, w], [-w, w], [-3.0, 3.0]]
    return MetricChart(3, dom, kind="product", params={"factor": factor, "radius": radius},
                       matrix=m, valid=valid, label=f"product({factor}xR)")


def schwarzschild(mass: float = 1.0, domain=None) -> MetricChart:
    """Spatial Schwarzschild metric (areal radius) in Cartesian-type coordinates.

    ``g_ij = δ_ij + (2m/(r - 2m)) x_i x_j / r²``, valid for r > 2m.
    """
    x = coordinate_symbols(3)
    m = sp.nsimplify(mass)
    r2 = sum(s**2 for s in x)
    r = sp.sqrt(r2)
    mat = sp.eye(3) + (2 * m / (r - 2 * m)) * sp.Matrix(3, 3, lambda i, j: x[i] * x[j]) / r2
    w = 8 * mass
    dom = domain if domain is not None else [[-w, w]] * 3
    valid = lambda p: np.sqrt(np.sum(p**2, axis=-1)) > 2 * mass
    return MetricChart(3, dom, kind="schwarzschild", params={"mass": mass}, matrix=mat,
                       valid=valid, label=f"schwarzschild({mass})")


def user_metric(metric_fn, n: int, domain, label="user") -> MetricChart:
    return MetricChart(n, domain, kind="user", metric_fn=metric_fn, label=label)


def from_descriptor(desc: dict) -> MetricChart:
    """Build a chart from ``{"kind", "dimension", "params", "domain"}``."""
    kind = desc.get("kind", "euclidean")
    n = int(desc.get("dimension", 3))
    params = dict(desc.get("params", {}))
    domain = desc.get("domain")
    if kind == "euclidean":
        return euclidean(n, domain)
    if kind == "conformally_flat":
        phi = params.get("phi", "0")
        phi_field = field_from_descriptor(phi, n)
        return conformally_flat(phi_field, n, domain)
    if kind == "stereographic_sphere":
        return stereographic_sphere(float(params.get("radius", 1.0)), n, domain)
    if kind == "poincare_ball":
        return poincare_ball(float(params.get("curvature", -1.0)), n, domain)
    if kind == "product":
        return product(params.get("factor", "S2"), float(params.get("radius", 1.0)), domain)
    if kind == "schwarzschild":
        return schwarzschild(float(params.get("mass", 1.0)), domain)
    if kind == "metric_expr":
        entries = params["g"]
        mat = sp.Matrix(n, n, lambda i, j: parse_expression(str(entries[i][j]), n))
        if mat != mat.T:
            raise DegenerateMetricError("metric expression matrix is not symmetric")
        return MetricChart(n, domain or [[-3.0, 3.0]] * n, kind="metric_expr", params=params,
                           matrix=mat)
    raise ValueError(f"unknown chart kind {kind!r}")


# local geometry ------------------------------------------------------------

@dataclass
class LocalGeometry:
    g: np.ndarray
    ginv: np.ndarray
    dg: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray | None  # dgamma[a, b, c, e] = d_e Γ^a_bc
    dginv: np.ndarray


def local_geometry(chart: MetricChart, points, second: bool = True) -> LocalGeometry:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g, dg, d2g = chart.metric_jet(pts)
    ginv = _safe_inv(g)
    gl = 0.5 * (np.einsum("ndcb->ndbc", dg) + dg - np.einsum("nbcd->ndbc", dg))
    gamma = np.einsum("nad,ndbc->nabc", ginv, gl)
    dginv = -np.einsum("nap,npqe,nqd->nade", ginv, dg, ginv)
    dgamma = None
    if second:
        dgl = 0.5 * (np.einsum("ndcbe->ndbce", d2g) + d2g - np.einsum("nbcde->ndbce", d2g))
        dgamma = (np.einsum("nade,ndbc->nabce", dginv, gl)
                  + np.einsum("nad,ndbce->nabce", ginv, dgl))
    return LocalGeometry(g, ginv, dg, gamma, dgamma, dginv)


def _single(points):
    arr = np.asarray(points, dtype=float)
    return arr.ndim == 1, np.atleast_2d(arr)


def christoffel(chart: MetricChart, point) -> np.ndarray:
    """Γ^a_bc at a point (or a batch)."""
    single, pts = _single(point)
    chart.check_points(pts)
    gam = local_geometry(chart, pts, second=False).gamma
    return gam[0] if single else gam


@dataclass
class CurvatureAt:
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray

    def symmetry_residual(self) -> float:
        R = self.riemann
        r1 = np.abs(R + np.swapaxes(R, -4, -3)).max()
        r2 = np.abs(R + np.swapaxes(R, -2, -1)).max()
        pair = np.moveaxis(np.moveaxis(R, -2, -4), -1, -3)
        r3 = np.abs(R - pair).max()
        return float(max(r1, r2, r3))


def _riemann_from_local(loc: LocalGeometry) -> np.ndarray:
    G, dG = loc.gamma, loc.dgamma
    rup = (np.einsum("nadbc->nabcd", dG) - np.einsum("nacbd->nabcd", dG)
           + np.einsum("nace,nedb->nabcd", G, G) - np.einsum("nade,necb->nabcd", G, G))
    return np.einsum("nae,nebcd->nabcd", loc.g, rup)


def curvature_at(chart: MetricChart, point) -> CurvatureAt:
    single, pts = _single(point)
    chart.check_points(pts)
    loc = local_geometry(chart, pts)
    R = _riemann_from_local(loc)
    ricci = np.einsum("nac,nabcd->nbd", loc.ginv, R)
    scalar = np.einsum("nbd,nbd->n", loc.ginv, ricci)
    if single:
        return CurvatureAt(R[0], ricci[0], scalar[0])
    return CurvatureAt(R, ricci, scalar)


def sectional_from_riemann(R, g, u, v):
    num = np.einsum("...abcd,...a,...b,...c,...d->...", R, u, v, u, v)
    guu = np.einsum("...ab,...a,...b->...", g, u, u)
    gvv = np.einsum("...ab,...a,...b->...", g, v, v)
    guv = np.einsum("...ab,...a,...b->...", g, u, v)
    den = guu * gvv - guv**2
    return num / den, den, guu * gvv


def sectional_curvature(chart: MetricChart, point, u, v) -> float:
    pt = np.asarray(point, dtype=float)
    cur = curvature_at(chart, pt)
    g = chart.metric(pt[None])[0]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    K, den, scale = sectional_from_riemann(cur.riemann, g, u, v)
    if den <= 1e-14 * max(scale, 1e-300):
        raise DegeneratePlaneError("u and v are (nearly) parallel")
    return float(K)


def gradient(chart: MetricChart, jet: Jet3, point) -> np.ndarray:
    """(∇f)^a = g^{ab} f_b."""
    single, pts = _single(point)
    chart.check_points(pts)
    ginv = chart.inverse_metric(pts)
    grad = np.atleast_2d(jet.grad)
    out = np.einsum("nab,nb->na", ginv, grad)
    return out[0] if single else out


def grad_norm_sq(chart: MetricChart, jet: Jet3, point):
    single, pts = _single(point)
    chart.check_points(pts)
    val = chart.grad_norm_sq(pts, np.atleast_2d(jet.grad))
    return val[0] if single else val


def laplace_beltrami(chart: MetricChart, jet: Jet3, point):
    """Δf = g^{ab}(f_ab - Γ^k_ab f_k)."""
    single, pts = _single(point)
    chart.check_points(pts)
    loc = local_geometry(chart, pts, second=False)
    grad = np.atleast_2d(jet.grad)
    hess = jet.hess if jet.hess.ndim == 3 else jet.hess[None]
    cov = hess - np.einsum("nkab,nk->nab", loc.gamma, grad)
    val = np.einsum("nab,nab->n", loc.ginv, cov)
    return val[0] if single else val


def covariant_hessian(chart: MetricChart, jet: Jet3, points, loc: LocalGeometry | None = None):
    loc = loc or local_geometry(chart, points, second=False)
    return jet.hess - np.einsum("nkab,nk->nab", loc.gamma, jet.grad)


@dataclass
class DerivedFields:
    """u₂ = ‖∇f‖², u₃ = Δf and their coordinate gradients at a batch of points."""

    u2: np.ndarray
    u3: np.ndarray
    du2: np.ndarray
    du3: np.ndarray


def derived_fields(chart: MetricChart, jet: Jet3, points) -> DerivedFields:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if jet.third is None:
        raise ValueError("derived field gradients need third derivatives")
    loc = local_geometry(chart, pts, second=True)
    fa, fab, fabc = jet.grad, jet.hess, jet.third
    u2 = np.einsum("nab,na,nb->n", loc.ginv, fa, fa)
    du2 = (np.einsum("nabc,na,nb->nc", loc.dginv, fa, fa)
           + 2 * np.einsum("nab,nac,nb->nc", loc.ginv, fab, fa))
    cov = fab - np.einsum("nkab,nk->nab", loc.gamma, fa)
    u3 = np.einsum("nab,nab->n", loc.ginv, cov)
    dcov = (fabc - np.einsum("nkabc,nk->nabc", loc.dgamma, fa)
            - np.einsum("nkab,nkc->nabc", loc.gamma, fab))
    du3 = np.einsum("nabc,nab->nc", loc.dginv, cov) + np.einsum("nab,nabc->nc", loc.ginv, dcov)
    return DerivedFields(u2, u3, du2, du3)


def riemann_3d_from_ricci(ricci, scalar, g):
    """In dimension 3 the Weyl tensor vanishes and Riemann is fixed by Ricci."""
    t = (np.einsum("...ac,...bd->...abcd", ricci, g) - np.einsum("...ad,...bc->...abcd", ricci, g)
         + np.einsum("...bd,...ac->...abcd", ricci, g) - np.einsum("...bc,...ad->...abcd", ricci, g))
    kn = np.einsum("...ac,...bd->...abcd", g, g) - np.einsum("...ad,...bc->...abcd", g, g)
    return t - 0.5 * np.asarray(scalar)[..., None, None, None, None] * kn


def conformal_ricci(phi_jet: Jet3, point=None, n: int = 3) -> CurvatureAt:
    """Curvature of ``exp(2φ) δ`` in dimension 3 from the jet of φ.

    R_ab = -(φ_ab - φ_a φ_b) - δ_ab (Δ_E φ + ‖∇_E φ‖²_E),
    R = exp(-2φ) (-4 Δ_E φ - 2 ‖∇_E φ‖²_E).
    """
    if n != 3:
        raise UnsupportedDimensionError("conformal_ricci is implemented for n = 3")
    grad = np.asarray(phi_jet.grad, dtype=float)
    if grad.shape[-1] != 3:
        raise UnsupportedDimensionError("phi jet must be 3-dimensional")
    hess = np.asarray(phi_jet.hess, dtype=float)
    val = np.asarray(phi_jet.value, dtype=float)
    lap = np.trace(hess, axis1=-2, axis2=-1)
    gn2 = np.sum(grad**2, axis=-1)
    eye = np.eye(3)
    ricci = -(hess - grad[..., :, None] * grad[..., None, :]) - (lap + gn2)[..., None, None] * eye
    scalar = np.exp(-2 * val) * (-4 * lap - 2 * gn2)
    g = np.exp(2 * val)[..., None, None] * eye
    return CurvatureAt(riemann_3d_from_ricci(ricci, scalar, g), ricci, scalar)


def euclidean_conformal_identities(phi_jet: Jet3, f_jet: Jet3):
    """Right-hand sides of the conformal gradient and Laplacian identities.

    For g = exp(2φ)δ in dimension 3: ‖∇f‖²_g = e^{-2φ}‖∇_E f‖²_E and
    Δ_g f = e^{-2φ}(Δ_E f + ∇_Eφ·∇_E f); with f = φ the latter becomes
    e^{-2φ}(‖∇_E φ‖² + Δ_E φ).
    """
    e = np.exp(-2 * phi_jet.value)
    gn = e * np.sum(f_jet.grad**2, axis=-1)
    lap = e * (np.trace(f_jet.hess, axis1=-2, axis2=-1) + np.sum(phi_jet.grad * f_jet.grad, axis=-1))
    return gn, lap

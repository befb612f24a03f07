"""Level-set extraction and the extrinsic/intrinsic geometry of fibers.

Meshes come from marching cubes (n=3) or marching squares (n=2); vertices
are then Newton-projected onto the exact level and every per-vertex
quantity is computed from analytic jets at the vertex, never from the mesh.

Sign convention: the unit normal is ∇f/‖∇f‖ and the shape operator is
S(v) = ∇_v n, so the level sets of ‖x‖² have k = +1/radius.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from itertools import combinations

import numpy as np
from scipy import integrate, interpolate
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .errors import (
    EmptyFiberError,
    GeometryError,
    IntervalError,
    NearCriticalError,
    UnsupportedDimensionError,
)
from .geometry import MetricChart, local_geometry, _riemann_from_local
from .partition import EquilibriumProfile, recover_profiles
from .scalarfield import ScalarFieldSpec, sample_domain

ZERO_K_REL = 1e-4
CV_TOL = 1e-3


# per-vertex geometry -------------------------------------------------------

@dataclass
class VertexGeometry:
    normal: np.ndarray  # contravariant unit normal n^a, (N, n)
    grad_norm: np.ndarray  # ‖∇f‖_g
    sff: np.ndarray  # H_ab, covariant, (N, n, n)
    H: np.ndarray
    k: np.ndarray  # principal curvatures, ascending, (N, n-1)
    tangent: np.ndarray  # g-orthonormal principal directions (N, n-1, n)
    K: np.ndarray | None = None  # ambient sectional curvature of the tangent plane
    Kbar: np.ndarray | None = None
    Kprime: np.ndarray | None = None
    K_ricci: np.ndarray | None = None  # R/2 - R_ab n^a n^b
    Rprime: np.ndarray | None = None  # Gauss-equation intrinsic scalar curvature
    gauss_residual: np.ndarray | None = None
    scalar_gauss_residual: np.ndarray | None = None


def vertex_geometry(f: ScalarFieldSpec, chart: MetricChart, points, eps_grad: float = 1e-10,
                    intrinsic: bool = True) -> VertexGeometry:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = chart.n
    loc = local_geometry(chart, pts, second=intrinsic and n == 3 and not chart.flat)
    jet = f.jets(pts, order=2)
    fa = jet.grad
    up = np.einsum("nab,nb->na", loc.ginv, fa)
    gn = np.sqrt(np.einsum("na,na->n", up, fa))
    if np.any(gn < eps_grad):
        bad = pts[np.argmin(gn)]
        raise NearCriticalError(f"‖∇f‖ = {gn.min():.3e} below {eps_grad} near {bad.tolist()}")
    n_up = up / gn[:, None]
    n_dn = fa / gn[:, None]
    cov = jet.hess - np.einsum("nkab,nk->nab", loc.gamma, fa)
    beta = np.eye(n)[None] - np.einsum("na,nc->nac", n_dn, n_up)  # β_a^c
    sff = np.einsum("nac,nbd,ncd->nab", beta, beta, cov) / gn[:, None, None]
    sff = 0.5 * (sff + np.swapaxes(sff, 1, 2))
    H = np.einsum("nab,nab->n", loc.ginv, sff)

    L = np.linalg.cholesky(loc.g)
    Linv = np.linalg.inv(L)
    Ht = Linv @ sff @ np.swapaxes(Linv, 1, 2)
    nt = np.einsum("nba,nb->na", L, n_up)  # Lᵀ n
    nt /= np.linalg.norm(nt, axis=1, keepdims=True)
    P = np.eye(n)[None] - np.einsum("na,nb->nab", nt, nt)
    Ht = P @ Ht @ P
    w, vecs = np.linalg.eigh(Ht)
    overlap = np.abs(np.einsum("nab,na->nb", vecs, nt))
    drop = np.argmax(overlap, axis=1)
    keep = np.ones_like(w, dtype=bool)
    keep[np.arange(w.shape[0]), drop] = False
    k = w[keep].reshape(w.shape[0], n - 1)
    tv = np.swapaxes(vecs, 1, 2)[keep].reshape(w.shape[0], n - 1, n)
    tangent = np.einsum("nab,nkb->nka", np.swapaxes(Linv, 1, 2), tv)  # L⁻ᵀ w
    order = np.argsort(k, axis=1)
    k = np.take_along_axis(k, order, axis=1)
    tangent = np.take_along_axis(tangent, order[:, :, None], axis=1)
    out = VertexGeometry(n_up, gn, sff, H, k, tangent)
    if intrinsic and n == 3:
        if chart.flat:
            R = np.zeros((pts.shape[0], 3, 3, 3, 3))
        else:
            R = _riemann_from_local(loc)
        ricci = np.einsum("nac,nabcd->nbd", loc.ginv, R)
        scal = np.einsum("nbd,nbd->n", loc.ginv, ricci)
        u, v = tangent[:, 0], tangent[:, 1]
        K = np.einsum("nabcd,na,nb,nc,nd->n", R, u, v, u, v)
        Rnn = np.einsum("nab,na,nb->n", ricci, n_up, n_up)
        Kbar = k[:, 0] * k[:, 1]
        Hmix = np.einsum("nac,ncb->nab", loc.ginv, sff)
        HH = np.einsum("nab,nba->n", Hmix, Hmix)
        Rp = scal - 2 * Rnn + H**2 - HH
        out.K = K
        out.Kbar = Kbar
        out.Kprime = K + Kbar
        out.K_ricci = scal / 2 - Rnn
        out.Rprime = Rp
        out.gauss_residual = np.abs(Rp / 2 - K - Kbar)
        out.scalar_gauss_residual = np.abs(Rp - 2 * out.Kprime)
    return out


def second_fundamental_form(f: ScalarFieldSpec, chart: MetricChart, point, eps_grad: float = 1e-10):
    """H_ab = β_a^c β_b^d n_{d;c} at a point (covariant n×n array)."""
    chart.check_points(point)
    return vertex_geometry(f, chart, point, eps_grad, intrinsic=False).sff[0]


def mean_curvature(f: ScalarFieldSpec, chart: MetricChart, point, eps_grad: float = 1e-10) -> float:
    chart.check_points(point)
    return float(vertex_geometry(f, chart, point, eps_grad, intrinsic=False).H[0])


def mean_curvature_from_profile(profile: EquilibriumProfile, level: float) -> float:
    """H = (−ω′/2 + ψ)/√ω from the recovered level profiles."""
    om, ps, omp = profile.interp(level)
    if om <= 0:
        raise NearCriticalError("ω vanishes at this level")
    return (-0.5 * omp + ps) / np.sqrt(om)


def principal_and_intrinsic(f: ScalarFieldSpec, chart: MetricChart, point, eps_grad: float = 1e-10) -> dict:
    """Principal curvatures and, for n=3, K, K̄, K′ and the Gauss-equation residual."""
    chart.check_points(point)
    vg = vertex_geometry(f, chart, point, eps_grad, intrinsic=chart.n == 3)
    out = {"k": vg.k[0].tolist()}
    if chart.n != 3:
        out["intrinsic_error"] = "K, K̄, K′ are implemented for n = 3 only"
        return out
    out.update(K=float(vg.K[0]), Kbar=float(vg.Kbar[0]), Kprime=float(vg.Kprime[0]),
               K_ricci=float(vg.K_ricci[0]), Rprime=float(vg.Rprime[0]),
               gauss_residual=float(vg.gauss_residual[0]), scalar_gauss_residual=float(vg.scalar_gauss_residual[0]))
    return out


# meshes --------------------------------------------------------------------

@dataclass
class FiberMesh:
    level: float
    vertices: np.ndarray
    faces: np.ndarray  # triangles (n=3) or segments (n=2)
    labels: np.ndarray  # component id per vertex
    clipped_components: list
    geometry: VertexGeometry | None = None
    level_error: float = 0.0
    warnings: list = dc_field(default_factory=list)
    field_label: str = ""

    @property
    def clipped(self) -> bool:
        return any(self.clipped_components)

    @property
    def n_components(self) -> int:
        return len(self.clipped_components)

    def component(self, i: int) -> "FiberMesh":
        sel = self.labels == i
        remap = -np.ones(self.vertices.shape[0], dtype=int)
        remap[sel] = np.arange(sel.sum())
        fsel = np.all(sel[self.faces], axis=1)
        geo = None
        if self.geometry is not None:
            g = self.geometry
            geo = VertexGeometry(**{k: (None if v is None else v[sel]) for k, v in g.__dict__.items()})
        return FiberMesh(self.level, self.vertices[sel], remap[self.faces[fsel]],
                         np.zeros(sel.sum(), dtype=int), [self.clipped_components[i]], geo,
                         self.level_error, list(self.warnings), self.field_label)

    def components(self) -> list:
        return [self.component(i) for i in range(self.n_components)]

    def euler_characteristic(self) -> int:
        V = self.vertices.shape[0]
        if self.faces.shape[1] == 2:
            return V - self.faces.shape[0]
        e = np.sort(np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                    self.faces[:, [2, 0]]]), axis=1)
        E = np.unique(e, axis=0).shape[0]
        return V - E + self.faces.shape[0]

    def summary(self) -> dict:
        d = {"level": self.level, "vertices": int(self.vertices.shape[0]),
             "faces": int(self.faces.shape[0]), "components": self.n_components,
             "clipped": self.clipped, "clipped_components": self.clipped_components,
             "level_error": self.level_error, "warnings": self.warnings}
        return d


def _grid_axes(chart, resolution, box=None):
    dom = chart.domain.copy()
    if box is not None:
        box = np.asarray(box, float)
        dom = np.stack([np.maximum(dom[:, 0], box[:, 0]), np.minimum(dom[:, 1], box[:, 1])], axis=1)
    res = np.broadcast_to(np.asarray(resolution), (chart.n,))
    return [np.linspace(lo, hi, int(r)) for (lo, hi), r in zip(dom, res)]


def _newton_project(f, pts, level, iters=6):
    x = pts.copy()
    for _ in range(iters):
        jet = f.jets(x, order=1)
        g2 = np.sum(jet.grad**2, axis=1)
        step = ((jet.value - level) / np.where(g2 > 0, g2, np.inf))[:, None] * jet.grad
        x = x - step
    return x


def extract_fiber(f: ScalarFieldSpec, chart: MetricChart, level: float, grid_resolution=64,
                  box=None, eps_grad: float = 1e-8, geometry: bool = True) -> FiberMesh:
    """Extract the level set ``f = level`` on a regular grid over the chart box."""
    n = chart.n
    if n not in (2, 3):
        raise UnsupportedDimensionError("fiber extraction supports n = 2 and n = 3")
    axes = _grid_axes(chart, grid_resolution, box)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = mesh.shape[:-1]
    flat_pts = mesh.reshape(-1, n)
    vals = f.value(flat_pts)
    valid = chart.contains(flat_pts) & np.isfinite(vals)
    if not valid.any():
        raise EmptyFiberError("field is undefined on the whole grid")
    vmin, vmax = vals[valid].min(), vals[valid].max()
    if not (vmin < level < vmax):
        raise EmptyFiberError(f"level {level} outside the field range [{vmin:.6g}, {vmax:.6g}] on the grid")
    # invalid chart points are pushed above the level; the fiber will be clipped there
    fill = vmax + abs(vmax - vmin) + 1.0
    vol = np.where(valid, vals, fill).reshape(shape)
    spacing = np.array([a[1] - a[0] for a in axes])
    origin = np.array([a[0] for a in axes])
    if n == 3:
        verts, faces, _, _ = measure.marching_cubes(vol, level=level, spacing=tuple(spacing),
                                                    allow_degenerate=False)
        verts = verts + origin
        faces = faces.astype(int)
    else:
        verts_l, segs_l, off = [], [], 0
        for c in measure.find_contours(vol, level):
            closed = np.allclose(c[0], c[-1])
            pts = c[:-1] if closed else c
            m = pts.shape[0]
            idx = np.arange(m) + off
            seg = np.stack([idx[:-1], idx[1:]], axis=1)
            if closed:
                seg = np.vstack([seg, [idx[-1], idx[0]]])
            verts_l.append(pts * spacing + origin)
            segs_l.append(seg)
            off += m
        if not verts_l:
            raise EmptyFiberError(f"no contour at level {level}")
        verts = np.vstack(verts_l)
        faces = np.vstack(segs_l).astype(int)
    if verts.shape[0] == 0:
        raise EmptyFiberError(f"no fiber at level {level}")
    lo, hi = origin, np.array([a[-1] for a in axes])
    tol_b = 1e-9 * spacing
    touching = np.any((verts <= lo + tol_b) | (verts >= hi - tol_b), axis=1)
    # vertices adjacent to invalid chart points also count as clipped
    near_invalid = np.zeros(verts.shape[0], dtype=bool)
    if not valid.all():
        idx = np.clip(np.rint((verts - origin) / spacing).astype(int), 0, np.array(shape) - 1)
        near_invalid = ~valid.reshape(shape)[tuple(idx.T)]
    touching |= near_invalid

    nv = verts.shape[0]
    if n == 3:
        rows = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
        cols = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    else:
        rows, cols = faces[:, 0], faces[:, 1]
    adj = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(nv, nv))
    ncomp, labels = connected_components(adj, directed=False)
    clipped = [bool(touching[labels == i].any()) for i in range(ncomp)]

    verts = _newton_project(f, verts, level)
    inside = chart.contains(verts)
    verts = np.where(inside[:, None], verts, np.clip(verts, chart.domain[:, 0], chart.domain[:, 1]))
    err = float(np.max(np.abs(f.value(verts) - level)))
    fm = FiberMesh(float(level), verts, faces, labels, clipped, level_error=err, field_label=f.label)
    grad = f.jets(verts, order=1).grad
    gmin = float(np.sqrt(chart.grad_norm_sq(verts, grad)).min())
    if gmin < max(eps_grad, 1e-6):
        fm.warnings.append(f"critical level: min ‖∇f‖ on the fiber is {gmin:.3e}")
    if geometry:
        fm.geometry = vertex_geometry(f, chart, verts, eps_grad=min(eps_grad, 0.5 * gmin) if gmin > 0 else 0.0)
    return fm


def extract_fibers(f, chart, levels, grid_resolution=64, box=None, workers: int = 1, **kw) -> list:
    """Extract several levels, optionally on a bounded thread pool."""
    if workers <= 1:
        return [extract_fiber(f, chart, c, grid_resolution, box, **kw) for c in levels]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(extract_fiber, f, chart, c, grid_resolution, box, **kw) for c in levels]
        return [fu.result() for fu in futs]


# constancy and classification ---------------------------------------------

def _cv(values, floor):
    m = np.mean(values)
    return float(np.std(values) / max(abs(m), floor))


def curvature_cvs(k: np.ndarray) -> list:
    floor = ZERO_K_REL * (np.abs(k).max() + 1)
    return [_cv(k[:, i], floor) for i in range(k.shape[1])]


def power_sum_constancy(mesh: FiberMesh, max_power: int | None = None, tol: float = CV_TOL) -> dict:
    """CV over vertices of Σkᵢ^p for p = 1..max_power."""
    if mesh.geometry is None:
        raise GeometryError("mesh carries no per-vertex curvature")
    k = mesh.geometry.k
    max_power = max_power or k.shape[1]
    sums, cvs = [], []
    scale = np.abs(k).max() + 1
    for p in range(1, max_power + 1):
        s = np.sum(k**p, axis=1)
        sums.append(float(np.mean(s)))
        cvs.append(_cv(s, ZERO_K_REL * scale**p))
    return {"powers": list(range(1, max_power + 1)), "mean": sums, "cv": cvs,
            "constant": bool(max(cvs) < tol), "clipped": mesh.clipped}


@dataclass
class ClassificationReport:
    label: str
    b: float | None
    p: int
    q: int
    curvature_cv: float
    residual: float
    k_mean: list
    clipped: bool
    H_mean: float = 0.0
    H_cv: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def classify_fiber(mesh: FiberMesh, chart: MetricChart, tol: float = CV_TOL) -> ClassificationReport:
    """Fit the standard-cylinder type bS^p×R^q to the principal curvatures."""
    if mesh.geometry is None:
        raise GeometryError("mesh carries no per-vertex curvature")
    k = mesh.geometry.k
    H = mesh.geometry.H
    cvs = curvature_cvs(k)
    cv = max(cvs)
    km = k.mean(axis=0)
    scale = np.abs(km).max() + 1
    zero = np.abs(km) < ZERO_K_REL * scale
    q = int(zero.sum())
    p = k.shape[1] - q
    nz = km[~zero]
    b = float(1.0 / np.mean(np.abs(nz))) if nz.size else None
    # residual: spread of the nonzero curvatures about a common value
    residual = float(np.ptp(np.abs(nz)) / np.mean(np.abs(nz))) if nz.size else float(np.abs(km).max())
    H_cv = _cv(H, ZERO_K_REL * (np.abs(H).max() + 1))
    if cv > tol or (nz.size and residual > tol):
        label = "non-constant" if cv > tol else "constant-principal-curvatures"
    elif not chart.flat:
        label = "constant-principal-curvatures"
    elif q == 0:
        label = "sphere"
    elif p == 0:
        label = "plane"
    else:
        label = "cylinder"
    if label == "constant-principal-curvatures" and chart.flat and nz.size and residual > tol:
        # unequal nonzero curvatures: not a standard cylinder (cannot occur for
        # isoparametric fibers of flat space, reported for completeness)
        label = "non-constant"
    return ClassificationReport(label, b, p, q, cv, residual, km.tolist(), mesh.clipped,
                                float(H.mean()), H_cv)


def topology_invariance(f: ScalarFieldSpec, chart: MetricChart, levels, grid=64, box=None) -> dict:
    """Euler characteristic per component per level."""
    per_level = []
    clipped = False
    for c in levels:
        m = extract_fiber(f, chart, c, grid, box, geometry=False)
        clipped |= m.clipped
        chis = sorted(comp.euler_characteristic() for comp in m.components())
        per_level.append({"level": float(c), "chi": chis, "clipped": m.clipped})
    if clipped:
        verdict = "indeterminate (clipped)"
    else:
        verdict = "invariant" if all(pl["chi"] == per_level[0]["chi"] for pl in per_level) else "changed"
    return {"levels": per_level, "verdict": verdict}


# parallelism ---------------------------------------------------------------

@dataclass
class ParallelismReport:
    geodesic_distance: float
    lambda_gap: float
    flow_residual: float
    flow_residual_profile: float
    shooting_distances: list
    shooting_agreement: float
    landing_error: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _unit_normal_field(f, chart):
    def rhs(x):
        jet = f.jets(x, order=1)
        ginv = chart.inverse_metric(x)
        up = np.einsum("nab,nb->na", ginv, jet.grad)
        gn = np.sqrt(np.einsum("na,na->n", up, jet.grad))
        return up / gn[:, None], gn, jet.value
    return rhs


def shoot_normal(f, chart, x0, length, steps=100, target=None, land_iters=4):
    """RK4 along the unit normal field for arc length ``length``.

    With ``target`` the endpoint is corrected onto f = target using
    df/ds = ‖∇f‖; the returned distance includes that correction.
    """
    rhs = _unit_normal_field(f, chart)
    x = np.atleast_2d(np.asarray(x0, float)).copy()
    h = length / steps
    for _ in range(steps):
        k1 = rhs(x)[0]
        k2 = rhs(x + 0.5 * h * k1)[0]
        k3 = rhs(x + 0.5 * h * k2)[0]
        k4 = rhs(x + h * k3)[0]
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    dist = np.full(x.shape[0], float(length))
    if target is not None:
        for _ in range(land_iters):
            _, gn, val = rhs(x)
            ds = (target - val) / gn
            # one RK4 step of size ds per point
            k1 = rhs(x)[0]
            k2 = rhs(x + 0.5 * ds[:, None] * k1)[0]
            k3 = rhs(x + 0.5 * ds[:, None] * k2)[0]
            k4 = rhs(x + ds[:, None] * k3)[0]
            x = x + ds[:, None] / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            dist = dist + ds
    return x, dist


def _profile_spline(profile, c1, c2):
    lv = profile.levels
    if not profile.covers(c1, c2):
        lo, hi = profile.f_range
        raise IntervalError(f"profile covers [{lo:.6g}, {hi:.6g}], not [{c1}, {c2}]")
    if np.any(profile.omega <= 0):
        raise IntervalError("ω vanishes inside the interval: critical value")
    return interpolate.CubicSpline(lv, profile.omega)


def geodesic_offset(f: ScalarFieldSpec, chart: MetricChart, c1: float, c2: float,
                    profile: EquilibriumProfile | None = None, samples: int = 4000,
                    n_residual: int = 50, n_shoot: int = 10, seed: int = 0,
                    eps_grad: float = 1e-6) -> ParallelismReport:
    """Δλ = ∫df/ω, Δs = ∫df/√ω between two levels, with residual checks."""
    if c2 <= c1:
        raise IntervalError("need c1 < c2")
    margin = 0.15 * (c2 - c1)
    region = lambda p: np.abs(f.value(p) - 0.5 * (c1 + c2)) <= 0.5 * (c2 - c1) + margin  # noqa: E731
    cloud = sample_domain(chart, f, samples, eps_grad, seed=seed, region=region)
    if profile is None:
        profile = recover_profiles(f, chart, cloud, bins=32)
    spl = _profile_spline(profile, c1, c2)
    fine = np.linspace(c1, c2, 257)
    if np.any(spl(fine) <= 0):
        raise IntervalError("interpolated ω vanishes inside the interval")
    dlam = integrate.quad(lambda t: 1.0 / spl(t), c1, c2, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    ds = integrate.quad(lambda t: 1.0 / np.sqrt(spl(t)), c1, c2, epsabs=1e-14, epsrel=1e-13, limit=200)[0]

    # D_{∇f}∇f − (ω′/2)∇f at sample points in the band
    rng = np.random.default_rng(seed)
    pts = cloud.points[rng.choice(len(cloud), size=min(n_residual, len(cloud)), replace=False)]
    loc = local_geometry(chart, pts, second=False)
    jet = f.jets(pts, order=2)
    X = np.einsum("nab,nb->na", loc.ginv, jet.grad)
    dX = np.einsum("nabc,nb->nac", loc.dginv, jet.grad) + np.einsum("nab,nbc->nac", loc.ginv, jet.hess)
    DX = np.einsum("nc,nac->na", X, dX) + np.einsum("nacd,nc,nd->na", loc.gamma, X, X)
    om = np.einsum("na,na->n", X, jet.grad)
    # ω′ pointwise: ∇‖∇f‖² = ω′ ∇f for an equilibrium field, projected on ∇f
    du2 = 2 * np.einsum("na,nac->nc", X, np.einsum("nab,nbc->nac", loc.g, dX)) \
        + np.einsum("npqc,np,nq->nc", loc.dg, X, X)
    omp_pt = np.einsum("na,na->n", du2, X) / om
    def gnorm(v):
        return np.sqrt(np.einsum("nab,na,nb->n", loc.g, v, v))
    res = gnorm(DX - 0.5 * omp_pt[:, None] * X)
    omp_prof = np.array([profile.interp(float(v))[2] if profile.levels[0] <= v <= profile.levels[-1]
                         else np.nan for v in jet.value])
    res_prof = gnorm(DX - 0.5 * omp_prof[:, None] * X)

    # independent cross-check: shoot from points of fiber c1 to fiber c2
    start = _newton_project(f, cloud.points[rng.choice(len(cloud), size=n_shoot, replace=False)], c1)
    _, dist = shoot_normal(f, chart, start, ds, steps=100, target=c2)
    landed, _ = shoot_normal(f, chart, start, ds, steps=100)
    land_err = float(np.max(np.abs(f.value(landed) - c2)))
    return ParallelismReport(float(ds), float(dlam), float(res.max()), float(np.nanmax(res_prof)),
                             dist.tolist(), float(np.max(np.abs(dist - ds))), land_err)


def offset_mean_curvature(k: np.ndarray, r: float) -> np.ndarray:
    """H′ = [Σ_j j·e_j(k) r^{j−1}] / Π(1 + r kᵢ), e_j elementary symmetric."""
    k = np.atleast_2d(k)
    m = k.shape[1]
    num = np.zeros(k.shape[0])
    for j in range(1, m + 1):
        ej = sum(np.prod(k[:, list(c)], axis=1) for c in combinations(range(m), j))
        num += j * ej * r ** (j - 1)
    return num / np.prod(1 + r * k, axis=1)


def parallel_curvature_check(fiber1: FiberMesh, fiber2: FiberMesh, r: float, chart: MetricChart,
                             f: ScalarFieldSpec, max_pairs: int = 500, seed: int = 0) -> dict:
    """Compare principal curvatures at points joined by a normal segment of length r."""
    if not chart.flat:
        raise GeometryError("parallel curvature check needs a flat chart")
    if fiber1.geometry is None:
        raise GeometryError("fiber1 carries no per-vertex curvature")
    rng = np.random.default_rng(seed)
    nv = fiber1.vertices.shape[0]
    idx = np.sort(rng.choice(nv, size=min(max_pairs, nv), replace=False))
    x = fiber1.vertices[idx]
    normal = fiber1.geometry.normal[idx]
    k = fiber1.geometry.k[idx]
    y = x + r * normal
    inside = chart.contains(y)
    dropped = int((~inside).sum())
    if not inside.any():
        raise GeometryError("every normal segment leaves the chart")
    y, k = y[inside], k[inside]
    g2 = vertex_geometry(f, chart, y, intrinsic=False)
    pred = k / (1 + r * k)
    res_k = np.abs(np.sort(g2.k, axis=1) - np.sort(pred, axis=1)).max()
    res_h = np.abs(g2.H - offset_mean_curvature(k, r)).max()
    landing = float(np.abs(f.value(y) - fiber2.level).max())
    return {"offset_curvature_residual": float(res_k), "offset_mean_curvature_residual": float(res_h),
            "pairs": int(y.shape[0]),
            "dropped": dropped, "landing_error": landing, "r": float(r)}


# export --------------------------------------------------------------------

def write_off(mesh: FiberMesh, path: str, sidecar: bool = True) -> None:
    """OFF text mesh (3-D coordinates; n=2 padded with z=0) plus a JSON sidecar."""
    v = mesh.vertices
    if v.shape[1] == 2:
        v = np.hstack([v, np.zeros((v.shape[0], 1))])
    lines = ["OFF", f"{v.shape[0]} {mesh.faces.shape[0]} 0"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in v]
    lines += [f"{mesh.faces.shape[1]} " + " ".join(str(i) for i in fc) for fc in mesh.faces]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if sidecar:
        side = mesh.summary()
        g = mesh.geometry
        if g is not None:
            side["per_vertex"] = {"normal": g.normal.tolist(), "H": g.H.tolist(), "k": g.k.tolist()}
            for name in ("K", "Kbar", "Kprime"):
                val = getattr(g, name)
                if val is not None:
                    side["per_vertex"][name] = val.tolist()
        with open(path.rsplit(".", 1)[0] + ".json", "w") as fh:
            json.dump(side, fh)


def fiber_report(mesh: FiberMesh, chart: MetricChart) -> dict:
    """Classification and residual summary per component."""
    comps = []
    for comp in mesh.components():
        entry = comp.summary()
        entry["classification"] = classify_fiber(comp, chart).to_dict()
        g = comp.geometry
        if g is not None and g.gauss_residual is not None:
            entry["gauss_residual_max"] = float(g.gauss_residual.max())
            entry["scalar_gauss_residual_max"] = float(g.scalar_gauss_residual.max())
            entry["K_vs_ricci_max"] = float(np.abs(g.K - g.K_ricci).max())
        comps.append(entry)
    return {"level": mesh.level, "components": comps}


__all__ = [
    "FiberMesh", "VertexGeometry", "ClassificationReport", "ParallelismReport",
    "vertex_geometry", "second_fundamental_form", "mean_curvature", "mean_curvature_from_profile",
    "principal_and_intrinsic", "power_sum_constancy", "classify_fiber", "extract_fiber",
    "extract_fibers", "geodesic_offset", "parallel_curvature_check", "topology_invariance",
    "offset_mean_curvature", "shoot_normal", "write_off", "fiber_report",
]

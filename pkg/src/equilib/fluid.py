"""Static self-gravitating fluid bodies with planar, cylindrical or spherical
symmetry, in the convention ΔV = ρ with hydrostatic balance ∇p + ρ∇V = 0
and a polytropic equation of state p = K ρ^(1+1/m).

Under the symmetry the problem reduces to the Lane–Emden equation
θ'' + (q/ξ)θ' + θ^m = 0, with ρ = ρ_c θ^m, p = p_c θ^(m+1), r = αξ and
V = c − α²ρ_c θ inside the body. Outside, V is the q-appropriate harmonic
function matched in value and slope at the surface.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from .errors import (ConfigError, GeometryError, ResolutionError, UnboundedSupportError,
                     UnsupportedError)
from .fibergeom import classify_fiber, extract_fiber
from .geometry import MetricChart, covariant_hessian, curvature_at, euclidean, local_geometry
from .partition import P1ProblemSpec, equilibrium_test, p1_residuals
from .scalarfield import Jet3, ScalarFieldSpec

SYMMETRY_NAMES = {"spherical": 2, "cylindrical": 1, "planar": 0}
SHAPES = {2: "sphere", 1: "cylinder", 0: "plane"}
XI_START = 1e-4


def _symmetry(q) -> int:
    if isinstance(q, str):
        if q in SYMMETRY_NAMES:
            return SYMMETRY_NAMES[q]
        try:
            q = int(q)
        except ValueError:
            raise ConfigError(f"unknown symmetry {q!r}", "symmetry") from None
    if q not in (0, 1, 2):
        raise ConfigError(f"symmetry must be 0, 1 or 2, got {q}", "symmetry")
    return int(q)


@dataclass
class PolytropeConfig:
    index: float
    K: float = 1.0
    rho_c: float = 1.0
    symmetry: int | str = 2
    tolerance: float = 1e-12
    xi_max: float = 1e4

    def __post_init__(self):
        self.symmetry = _symmetry(self.symmetry)
        if not self.index >= 0:
            raise ConfigError("polytrope index must be >= 0", "index")
        if not self.K > 0:
            raise ConfigError("K must be positive", "K")
        if not self.rho_c > 0:
            raise ConfigError("central density must be positive", "rho_c")
        if not 0 < self.tolerance < 1e-3:
            raise ConfigError("tolerance must lie in (0, 1e-3)", "tolerance")

    @property
    def p_c(self) -> float:
        # m = 0 is the incompressible limit; p_c = K ρ_c² keeps α² = K there
        m = self.index
        return self.K * self.rho_c ** 2 if m == 0 else self.K * self.rho_c ** (1 + 1 / m)

    @property
    def alpha(self) -> float:
        return float(np.sqrt((self.index + 1) * self.p_c / self.rho_c ** 2))


@dataclass
class LaneEmden:
    m: float
    q: int
    xi1: float
    dtheta1: float
    dense: object = dc_field(repr=False)
    tol: float = 1e-12

    def _series(self, xi):
        q, m = self.q, self.m
        a = -1.0 / (2 * (q + 1))
        b = m / (8 * (q + 1) * (q + 3))
        return 1 + a * xi**2 + b * xi**4, 2 * a * xi + 4 * b * xi**3

    def theta(self, xi, derivative: bool = False):
        """θ(ξ) (and θ'(ξ)); θ is clamped to 0 beyond the first zero."""
        xi = np.abs(np.asarray(xi, float))
        th = np.zeros_like(xi)
        dth = np.zeros_like(xi)
        small = xi < XI_START
        mid = ~small & (xi < self.xi1)
        s0, s1 = self._series(xi[small])
        th[small], dth[small] = s0, s1
        if mid.any():
            y = self.dense(xi[mid])
            th[mid], dth[mid] = y[0], y[1]
        th = np.maximum(th, 0.0)
        return (th, dth) if derivative else th

    def derivatives(self, xi):
        """θ, θ', θ'', θ''' from the dense table and the ODE itself."""
        xi = np.abs(np.asarray(xi, float))
        th, d1 = self.theta(xi, derivative=True)
        m, q = self.m, self.q
        with np.errstate(all="ignore"):
            thm = np.where(th > 0, th, 0.0) ** m if m > 0 else np.ones_like(th)
            thm1 = m * np.where(th > 0, th ** (m - 1), 0.0) if m > 0 else np.zeros_like(th)
            safe = np.where(xi > 0, xi, 1.0)
            d2 = np.where(xi > 0, -thm - q / safe * d1, -1.0 / (q + 1))
            d3 = np.where(xi > 0, -thm1 * d1 + q / safe**2 * d1 - q / safe * d2, 0.0)
        return th, d1, d2, d3


def lane_emden_solve(m: float, q, tol: float = 1e-12, xi_max: float = 1e4) -> LaneEmden:
    """Integrate from a series start to the first zero of θ."""
    q = _symmetry(q)
    if m < 0:
        raise ConfigError("polytrope index must be >= 0", "index")
    a = -1.0 / (2 * (q + 1))
    b = m / (8 * (q + 1) * (q + 3))
    x0 = XI_START
    y0 = [1 + a * x0**2 + b * x0**4, 2 * a * x0 + 4 * b * x0**3]

    def rhs(xi, y):
        th = max(y[0], 0.0)
        return [y[1], -(th**m if m > 0 else 1.0) - q / xi * y[1]]

    def hit(xi, y):
        return y[0]
    hit.terminal = True
    hit.direction = -1

    rtol = max(tol, 3e-14)
    sol = solve_ivp(rhs, (x0, xi_max), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                    dense_output=True, events=hit)
    if sol.status == -1:
        raise GeometryError(f"Lane–Emden integration failed: {sol.message}")
    if not sol.t_events[0].size:
        raise UnboundedSupportError(f"θ has no zero below ξ = {xi_max:g} (m = {m}, q = {q})")
    xe = float(sol.t_events[0][0])
    dense = sol.sol
    lo, hi = max(x0, xe * (1 - 1e-6)), min(sol.t[-1], xe * (1 + 1e-6))
    if dense(lo)[0] > 0 > dense(hi)[0]:
        xe = brentq(lambda x: dense(x)[0], lo, hi, xtol=1e-15, rtol=1e-15)
    return LaneEmden(m, q, xe, float(dense(xe)[1]), dense, tol)


@dataclass
class FluidSolution:
    config: PolytropeConfig
    lane_emden: LaneEmden
    r: np.ndarray
    V: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    boundary_radius: float
    boundary_potential: float
    exterior: dict
    mass: float

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def q(self) -> int:
        return self.config.symmetry

    def radial(self, r, which: str = "V", order: int = 0):
        """Profile and its radial derivatives up to ``order`` (list of arrays)."""
        r = np.abs(np.asarray(r, float))
        cfg, le = self.config, self.lane_emden
        al, rc, pc, m = self.alpha, cfg.rho_c, cfg.p_c, cfg.index
        xi = r / al
        inside = r < self.boundary_radius
        th, d1, d2, d3 = le.derivatives(np.where(inside, xi, 0.0))
        out = [np.zeros_like(r) for _ in range(order + 1)]
        with np.errstate(all="ignore"):
            if which == "V":
                kap = al * al * rc
                vin = [self.boundary_potential - kap * th, -kap * d1 / al,
                       -kap * d2 / al**2, -kap * d3 / al**3]
                vout = self._exterior(r)
            elif which in ("rho", "p"):
                # ψ(θ) = s θ^e; chain rule for ψ(θ(ξ(r)))
                s, e = (rc, m) if which == "rho" else (pc, m + 1)
                t = np.where(th > 0, th, 0.0)
                def pw(k):
                    return np.where(t > 0, t ** (e - k), 0.0) if e != k else np.ones_like(t)
                c1 = e * pw(1) if e else 0 * t
                c2 = e * (e - 1) * pw(2) if e else 0 * t
                c3 = e * (e - 1) * (e - 2) * pw(3) if e else 0 * t
                vin = [s * (pw(0) if e else np.ones_like(t)),
                       s * c1 * d1 / al,
                       s * (c2 * d1**2 + c1 * d2) / al**2,
                       s * (c3 * d1**3 + 3 * c2 * d1 * d2 + c1 * d3) / al**3]
                vout = [np.zeros_like(r)] * 4
            else:
                raise ValueError(f"unknown profile {which!r}")
        for k in range(order + 1):
            out[k] = np.where(inside, vin[k], vout[k])
        return out

    def _exterior(self, r):
        A, B = self.exterior["A"], self.exterior["B"]
        with np.errstate(all="ignore"):
            if self.q == 2:
                return [-A / r + B, A / r**2, -2 * A / r**3, 6 * A / r**4]
            if self.q == 1:
                return [A * np.log(r) + B, A / r, -A / r**2, 2 * A / r**3]
        return [A * r + B, A + 0 * r, 0 * r, 0 * r]

    def matching(self) -> dict:
        """Value and slope jumps of V at the surface, from both sides."""
        rb = self.boundary_radius
        le, al = self.lane_emden, self.alpha
        kap = al * al * self.config.rho_c
        th = float(le.dense(le.xi1)[0])
        v_in = self.boundary_potential - kap * th
        dv_in = -kap * le.dtheta1 / al
        ext = self._exterior(np.array([rb]))
        scale = max(abs(dv_in) * rb, abs(self.boundary_potential), 1e-300)
        return {"value_jump": float(abs(v_in - ext[0][0]) / scale),
                "slope_jump": float(abs(dv_in - ext[1][0]) / max(abs(dv_in), 1e-300)),
                "surface_slope": float(dv_in)}

    def gauss_mass(self) -> float:
        """∫ ρ r^q dr over the body by independent quadrature."""
        rb = self.boundary_radius
        val, _ = quad(lambda s: self.radial(np.array([s]), "rho")[0][0] * s**self.q, 0, rb,
                      limit=200, epsabs=0, epsrel=1e-12)
        return float(val)

    def to_dict(self) -> dict:
        cfg = self.config
        return {"index": cfg.index, "K": cfg.K, "rho_c": cfg.rho_c, "symmetry": cfg.symmetry,
                "alpha": self.alpha, "xi1": self.lane_emden.xi1,
                "boundary_radius": self.boundary_radius,
                "boundary_potential": self.boundary_potential,
                "exterior": dict(self.exterior), "mass": self.mass}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "V", "rho", "p"])
            for row in zip(self.r, self.V, self.rho, self.p):
                w.writerow([f"{v:.17g}" for v in row])


def solve_p2(config: PolytropeConfig, samples: int = 400, outer: float = 2.0) -> FluidSolution:
    """Lane–Emden body plus the matched exterior potential."""
    le = lane_emden_solve(config.index, config.symmetry, config.tolerance, config.xi_max)
    al, rc = config.alpha, config.rho_c
    q = config.symmetry
    rb = al * le.xi1
    kap = al * al * rc
    slope = -kap * le.dtheta1 / al
    if q == 2:
        A, B = rb * rb * slope, 0.0
        c = -A / rb + B
        kind = "-A/r + B"
    else:
        # no decay at infinity: put V = 0 on the symmetry axis/plane instead
        c = kap
        if q == 1:
            A = rb * slope
            B = c - A * np.log(rb)
            kind = "A ln r + B"
        else:
            A = slope
            B = c - A * rb
            kind = "A r + B"
    sol = FluidSolution(config, le, np.empty(0), np.empty(0), np.empty(0), np.empty(0),
                        float(rb), float(c), {"kind": kind, "A": float(A), "B": float(B)}, float(A))
    r = np.concatenate([np.linspace(0, rb, samples, endpoint=False),
                        np.linspace(rb, outer * rb, samples)])
    sol.r = r
    sol.V = sol.radial(r, "V")[0]
    sol.rho = sol.radial(r, "rho")[0]
    sol.p = sol.radial(r, "p")[0]
    return sol


class RadialField(ScalarFieldSpec):
    """A radial profile lifted to R³ by the symmetry, with chain-rule jets."""

    def __init__(self, sol: FluidSolution, which: str = "V"):
        self.sol = sol
        self.which = which
        q = sol.q
        self.proj = np.diag([1.0, 1.0, 1.0] if q == 2 else [1.0, 1.0, 0.0] if q == 1 else [0.0, 0.0, 1.0])
        super().__init__(3, f"{which}[m={sol.config.index},q={q}]", jet_fn=self._jets)

    def radius(self, pts):
        return np.linalg.norm(pts @ self.proj, axis=-1)

    def _jets(self, pts, order):
        P = self.proj
        px = pts @ P
        r = np.linalg.norm(px, axis=-1)
        if np.any(r == 0) and order >= 1:
            raise GeometryError("radial jets are singular on the symmetry set")
        psi = self.sol.radial(r, self.which, order=max(order, 0))
        if order == 0:
            return Jet3(psi[0], None, None, None)
        ra = px / r[:, None]
        grad = psi[1][:, None] * ra
        hess = third = None
        if order >= 2:
            rab = (P[None] - np.einsum("na,nb->nab", ra, ra)) / r[:, None, None]
            hess = psi[2][:, None, None] * np.einsum("na,nb->nab", ra, ra) + psi[1][:, None, None] * rab
            if order >= 3:
                sym = (np.einsum("nab,nc->nabc", rab, ra) + np.einsum("nac,nb->nabc", rab, ra)
                       + np.einsum("nbc,na->nabc", rab, ra))
                rabc = -sym / r[:, None, None, None]
                third = (psi[3][:, None, None, None] * np.einsum("na,nb,nc->nabc", ra, ra, ra)
                         + psi[2][:, None, None, None] * sym + psi[1][:, None, None, None] * rabc)
        return Jet3(psi[0], grad, hess, third)


def _cell_axes(half, res):
    edges = np.linspace(-half, half, res + 1)
    return 0.5 * (edges[1:] + edges[:-1])


def verify_solution(sol: FluidSolution, chart: MetricChart | None = None, grid: int = 64,
                    shell: float = 0.2, tol: float = 1e-3, match_tol: float = 1e-8,
                    mesh_resolution: int | None = None) -> dict:
    """Free-boundary residuals, equilibrium test and shape labels of a solution."""
    chart = chart or euclidean(3, np.array([[-1e6, 1e6]] * 3))
    if not chart.flat:
        raise UnsupportedError("the Newtonian fluid lives on a flat chart")
    rb, q = sol.boundary_radius, sol.q
    half = 1.5 * rb
    h = 2 * half / grid
    if h > rb / 4:
        raise ResolutionError(f"grid spacing {h:.3g} does not resolve the surface radius {rb:.3g}")
    axes = [_cell_axes(half, grid)] * 3
    Vf, rf, pf = RadialField(sol, "V"), RadialField(sol, "rho"), RadialField(sol, "p")
    spec = P1ProblemSpec(F=lambda v1, v2, v3: v2, G=lambda v2, v3: v2, H=lambda v1: np.ones_like(v1),
                         omega_mask=lambda x: Vf.radius(x) < rb, boundary_level=sol.boundary_potential,
                         allow_unbounded=q < 2)
    rep = {"solution": sol.to_dict()}
    p1 = p1_residuals(Vf, rf, pf, spec, chart, axes)
    rep["free_boundary"] = p1
    rep["matching"] = sol.matching()
    if q == 2:
        gm = sol.gauss_mass()
        rep["gauss"] = {"mass": sol.mass, "integral": gm, "relative": abs(sol.mass - gm) / abs(gm)}

    # equilibrium test on grid cells within the shell around the surface
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    rr = Vf.radius(mesh)
    cloud = mesh[(np.abs(rr - rb) <= shell * rb) & (rr > 0)]
    eq = equilibrium_test(Vf, chart, cloud, tol=tol, eps_grad=1e-10)
    rep["equilibrium"] = eq.to_dict()
    rep["equilibrium"]["points"] = int(cloud.shape[0])

    res = mesh_resolution or grid
    box = np.array([[-half, half]] * 3)
    expected = SHAPES[q]
    shapes = {}
    for name, frac in (("boundary", 1.0), ("interior", 0.5), ("exterior", 1.25)):
        level = float(sol.radial(np.array([frac * rb]), "V")[0][0]) if name != "boundary" \
            else sol.boundary_potential
        fib = extract_fiber(Vf, chart, level, grid_resolution=res, box=box)
        cl = classify_fiber(fib, chart)
        shapes[name] = {"level": level, "label": cl.label, "b": cl.b, "clipped": cl.clipped,
                        "curvature_cv": cl.curvature_cv, "vertices": int(fib.vertices.shape[0])}
    rep["shapes"] = shapes
    m = rep["matching"]
    scale = max(abs(sol.boundary_potential), abs(m["surface_slope"]) * rb, 1.0)
    checks = {
        "interior_laplace": p1["eq_interior_laplace"]["sup"] <= 1e-8 * scale / rb**2,
        "interior_euler": p1["eq_interior_euler"]["sup"] <= 1e-8 * scale / rb,
        "exterior_laplace": p1["eq_exterior_laplace"]["sup"] <= 1e-8 * scale / rb**2,
        "c1_matching": m["value_jump"] <= match_tol and m["slope_jump"] <= match_tol,
        "surface_gradient": abs(m["surface_slope"]) > 0,
        "equilibrium": eq.passed,
        "shapes": all(s["label"] == expected for s in shapes.values()),
    }
    if q == 2:
        checks["gauss"] = rep["gauss"]["relative"] <= 1e-6
        checks["boundary_sphere_radius"] = shapes["boundary"]["b"] is not None and \
            abs(shapes["boundary"]["b"] - rb) <= 1e-3
    rep["checks"] = checks
    rep["expected_shape"] = expected
    rep["passed"] = all(checks.values())
    return rep


def _as_field(v, n):
    if isinstance(v, ScalarFieldSpec):
        return v
    c = float(v)
    return ScalarFieldSpec.from_callable(lambda x, c=c: np.full(x.shape[0], c), n, label=str(c),
                                         grad=lambda x: np.zeros_like(x),
                                         hess=lambda x: np.zeros(x.shape + (x.shape[1],)))


def _stats(v, mask=None):
    v = np.abs(np.asarray(v, float))
    if mask is not None:
        v = v[mask]
    if v.size == 0:
        return {"sup": 0.0, "l2": 0.0, "count": 0}
    return {"sup": float(v.max()), "l2": float(np.sqrt(np.mean(v**2))), "count": int(v.size)}


def p3_residuals(V: ScalarFieldSpec, chart: MetricChart, rho=0.0, p=0.0, omega_mask=None, grid=None,
                 region=None, tol: float = 1e-6) -> dict:
    """Residuals of the static relativistic fluid system on a grid (checker only).

    ΔV = 4πV(ρ+3p) and V∇p + (ρ+p)∇V = 0 in Ω, ΔV = 0 outside, and the
    coupling R_ab = V⁻¹V_;ab + 4π(ρ−p)g_ab componentwise everywhere.
    ``region`` restricts the evaluation points (default: the chart domain).
    """
    if grid is None:
        raise GeometryError("a grid is required")
    axes = [np.asarray(a, float) for a in grid]
    if len(axes) != chart.n:
        raise GeometryError("grid dimension does not match the chart")
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, chart.n)
    keep = chart.contains(pts)
    if region is not None:
        keep &= np.asarray(region(pts), bool)
    pts = pts[keep]
    if pts.shape[0] == 0:
        raise GeometryError("no grid points inside the evaluation region")
    rho_f, p_f = _as_field(rho, chart.n), _as_field(p, chart.n)
    omega = np.zeros(pts.shape[0], bool) if omega_mask is None else np.asarray(omega_mask(pts), bool)
    jet = V.jets(pts, order=2)
    loc = local_geometry(chart, pts, second=True)
    hess = covariant_hessian(chart, jet, pts, loc)
    lap = np.einsum("nab,nab->n", loc.ginv, hess)
    rv, pv = rho_f.value(pts), p_f.value(pts)
    dp = p_f.jets(pts, order=1).grad
    curv = curvature_at(chart, pts)
    with np.errstate(all="ignore"):
        r_static = lap - 4 * np.pi * jet.value * (rv + 3 * pv)
        vec = jet.value[:, None] * dp + (rv + pv)[:, None] * jet.grad
        r_euler = np.sqrt(np.abs(np.einsum("nab,na,nb->n", loc.ginv, vec, vec)))
        coup = curv.ricci - hess / jet.value[:, None, None] - 4 * np.pi * (rv - pv)[:, None, None] * loc.g
    coup_max = np.abs(coup).reshape(coup.shape[0], -1).max(axis=1)
    rep = {
        "static_interior": _stats(r_static, omega),
        "static_euler": _stats(r_euler, omega),
        "static_exterior": _stats(lap, ~omega),
        "ricci_coupling": _stats(coup_max),
        "points": int(pts.shape[0]),
        "tol": tol,
    }
    worst = max(rep[k]["sup"] for k in ("static_interior", "static_euler", "static_exterior", "ricci_coupling"))
    rep["flagged"] = [k for k in ("static_interior", "static_euler", "static_exterior", "ricci_coupling")
                      if rep[k]["sup"] > tol]
    rep["max_residual"] = worst
    rep["passed"] = not rep["flagged"]
    return rep


def corrupted(sol: FluidSolution, factor: float = 1.01) -> FluidSolution:
    """Copy of ``sol`` with the exterior coefficient A scaled (defect injection)."""
    ext = dict(sol.exterior)
    ext["A"] *= factor
    bad = FluidSolution(sol.config, sol.lane_emden, sol.r, sol.V, sol.rho, sol.p,
                        sol.boundary_radius, sol.boundary_potential, ext, ext["A"])
    bad.V = bad.radial(bad.r, "V")[0]
    return bad

"""Euclidean isometry algebra: affine Killing fields, brackets, subalgebras
with generic orbit rank n−1, and their invariant fields.

Basis ordering: translations ∂_1..∂_n first, then the rotations
L_ij = x^i ∂_j − x^j ∂_i for i < j in lexicographic order. A field is
stored as X(x) = A x + a with A antisymmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from itertools import combinations

import numpy as np
import sympy as sp
from scipy.linalg import null_space
from scipy.stats import qmc

from ._symbolic import coordinate_symbols, parse_expression
from .errors import NotClosedError, RankError, UnsupportedError
from .geometry import MetricChart, derived_fields
from .partition import equilibrium_test
from .scalarfield import ScalarFieldSpec, sample_domain

CLOSURE_TOL = 1e-12


def rotation_pairs(n: int) -> list:
    return list(combinations(range(n), 2))


def basis_size(n: int) -> int:
    return n + n * (n - 1) // 2


def basis_labels(n: int) -> list:
    return [f"d{i + 1}" for i in range(n)] + [f"L{i + 1}{j + 1}" for i, j in rotation_pairs(n)]


@dataclass
class LieElement:
    coefficients: np.ndarray
    n: int

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (basis_size(self.n),):
            raise ValueError(f"expected {basis_size(self.n)} coefficients for n = {self.n}")

    @classmethod
    def basis(cls, n: int, k: int) -> "LieElement":
        c = np.zeros(basis_size(n))
        c[k] = 1.0
        return cls(c, n)

    @classmethod
    def from_affine(cls, A, a) -> "LieElement":
        A = np.asarray(A, dtype=float)
        a = np.asarray(a, dtype=float)
        n = a.size
        if np.abs(A + A.T).max() > CLOSURE_TOL * max(1.0, np.abs(A).max()):
            raise ValueError("rotation part must be antisymmetric")
        rot = [A[j, i] for i, j in rotation_pairs(n)]
        return cls(np.concatenate([a, rot]), n)

    def affine(self):
        n = self.n
        a = self.coefficients[:n].copy()
        A = np.zeros((n, n))
        for c, (i, j) in zip(self.coefficients[n:], rotation_pairs(n)):
            A[j, i] += c
            A[i, j] -= c
        return A, a

    def __call__(self, points) -> np.ndarray:
        A, a = self.affine()
        return np.atleast_2d(points) @ A.T + a

    def __add__(self, other):
        return LieElement(self.coefficients + other.coefficients, self.n)

    def __sub__(self, other):
        return LieElement(self.coefficients - other.coefficients, self.n)

    def __mul__(self, s):
        return LieElement(self.coefficients * s, self.n)

    __rmul__ = __mul__

    def __neg__(self):
        return LieElement(-self.coefficients, self.n)

    def label(self) -> str:
        terms = [f"{c:+g}·{lab}" for c, lab in zip(self.coefficients, basis_labels(self.n)) if c != 0]
        return " ".join(terms) if terms else "0"

    def __repr__(self):
        return f"LieElement({self.label()})"


def bracket(X: LieElement, Y: LieElement) -> LieElement:
    """[X, Y] for affine fields: [Ax+a, Bx+b] = (BA − AB)x + (Ba − Ab)."""
    if X.n != Y.n:
        raise ValueError("fields live in different dimensions")
    A, a = X.affine()
    B, b = Y.affine()
    return LieElement.from_affine(B @ A - A @ B, B @ a - A @ b)


def named_element(name: str, n: int = 3) -> LieElement:
    """``dx dy dz d1..dn``, ``Lx Ly Lz`` (n=3) or ``Lij``."""
    axis = {"x": 0, "y": 1, "z": 2}
    s = name.strip()
    if s.startswith("d") and s[1:] in axis:
        return LieElement.basis(n, axis[s[1:]])
    if s.startswith("d") and s[1:].isdigit():
        return LieElement.basis(n, int(s[1:]) - 1)
    if n == 3 and s in ("Lx", "Ly", "Lz"):
        # Lx = y∂z − z∂y = L23, Ly = z∂x − x∂z = −L13, Lz = x∂y − y∂x = L12
        pairs = rotation_pairs(3)
        if s == "Lx":
            return LieElement.basis(3, 3 + pairs.index((1, 2)))
        if s == "Ly":
            return -LieElement.basis(3, 3 + pairs.index((0, 2)))
        return LieElement.basis(3, 3 + pairs.index((0, 1)))
    if s.startswith("L") and len(s) == 3 and s[1:].isdigit():
        i, j = int(s[1]) - 1, int(s[2]) - 1
        sign = 1.0
        if i > j:
            i, j, sign = j, i, -1.0
        return sign * LieElement.basis(n, n + rotation_pairs(n).index((i, j)))
    raise ValueError(f"unknown basis element {name!r}")


def rotation_about(axis_name: str, center, n: int = 3) -> LieElement:
    """Rotation generator about an axis through ``center``: A(x − c)."""
    A, _ = named_element(axis_name, n).affine()
    c = np.asarray(center, float)
    return LieElement.from_affine(A, -A @ c)


# subalgebras ---------------------------------------------------------------

@dataclass
class Subalgebra:
    generators: list
    structure_constants: np.ndarray  # c[i, j, k]: [X_i, X_j] = Σ_k c_ijk X_k
    generic_rank: int
    rank_fraction: float
    rank_defect_locus: list = dc_field(default_factory=list)
    name: str = ""

    @property
    def n(self) -> int:
        return self.generators[0].n

    @property
    def abelian(self) -> bool:
        return bool(np.all(self.structure_constants == 0))

    def to_dict(self) -> dict:
        return {"name": self.name, "generators": [g.coefficients.tolist() for g in self.generators],
                "structure_constants": self.structure_constants.tolist(),
                "generic_rank": self.generic_rank, "rank_fraction": self.rank_fraction,
                "abelian": self.abelian, "rank_defect_locus": self.rank_defect_locus}


def _point_ranks(gens, pts, rtol=1e-10):
    M = np.stack([g(pts) for g in gens], axis=1)  # (N, p, n)
    sv = np.linalg.svd(M, compute_uv=False)
    scale = np.maximum(sv[:, :1], 1e-300)
    return np.sum(sv > rtol * np.maximum(scale, 1.0), axis=1)


def _defect_locus(gens, n, generic, dom):
    """Probe coordinate axes and the origin for rank drops."""
    found = []
    lo, hi = dom[:, 0], dom[:, 1]
    center = np.clip(np.zeros(n), lo, hi)
    if _point_ranks(gens, center[None])[0] < generic:
        found.append("origin")
    t = np.linspace(0.05, 0.95, 17)
    for k in range(n):
        line = np.tile(center, (t.size, 1))
        line[:, k] = lo[k] + t * (hi[k] - lo[k])
        if np.all(_point_ranks(gens, line) < generic):
            found.append(f"x{k + 1}-axis")
    if len(found) > 1 and "origin" in found:
        found.remove("origin")
    return found


def verify_subalgebra(gens: list, chart: MetricChart | None = None, samples: int = 1000,
                      seed: int = 0, name: str = "", require_rank: bool = True) -> Subalgebra:
    """Closure with exact structure constants and generic orbit rank n−1."""
    if len(gens) < 1:
        raise ValueError("need at least one generator")
    n = gens[0].n
    p = len(gens)
    M = np.stack([g.coefficients for g in gens], axis=1)  # (d, p)
    if np.linalg.matrix_rank(M) < p:
        raise ValueError("generators are linearly dependent")
    c = np.zeros((p, p, p))
    for i in range(p):
        for j in range(i + 1, p):
            br = bracket(gens[i], gens[j])
            sol, *_ = np.linalg.lstsq(M, br.coefficients, rcond=None)
            resid = np.abs(M @ sol - br.coefficients).max()
            if resid > CLOSURE_TOL:
                raise NotClosedError(
                    f"[X{i + 1}, X{j + 1}] = {br.label()} leaves the span (residual {resid:.3e})",
                    pair=(i, j), bracket=br)
            sol = np.where(np.abs(sol) < CLOSURE_TOL, 0.0, sol)
            c[i, j] = sol
            c[j, i] = -sol
    dom = chart.domain if chart is not None else np.array([[-3.0, 3.0]] * n)
    pts = qmc.scale(qmc.Halton(d=n, scramble=True, seed=seed).random(samples), dom[:, 0], dom[:, 1])
    ranks = _point_ranks(gens, pts)
    vals, counts = np.unique(ranks, return_counts=True)
    generic = int(vals[np.argmax(counts)])
    frac = float(np.mean(ranks == n - 1))
    if require_rank and frac < 0.99:
        raise RankError(f"generic orbit rank is {generic} (rank n−1 = {n - 1} at only {frac:.1%} of samples)")
    locus = _defect_locus(gens, n, generic, dom)
    return Subalgebra(list(gens), c, generic, frac, locus, name)


# invariants ----------------------------------------------------------------

@dataclass
class Invariant:
    kind: str  # plane, sphere or cylinder
    expr: sp.Expr
    normal: np.ndarray | None = None
    center: np.ndarray | None = None
    axis: np.ndarray | None = None


def _sym_index(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def find_invariant(sub: Subalgebra, tol: float = 1e-10) -> Invariant:
    """Polynomial invariant of degree ≤ 2 of the subalgebra.

    h = xᵀQx + 2qᵀx is invariant under X = Ax + a iff sym(QA) = 0,
    Qa + Aᵀq = 0 and q·a = 0, a linear system in (Q, q).
    """
    n = sub.n
    sidx = _sym_index(n)
    nq = len(sidx)
    rows = []
    for g in sub.generators:
        A, a = g.affine()
        # columns: Q entries (symmetric), then q
        def qmat(col):
            Q = np.zeros((n, n))
            if col < nq:
                i, j = sidx[col]
                Q[i, j] = Q[j, i] = 1.0
            return Q

        def qvec(col):
            v = np.zeros(n)
            if col >= nq:
                v[col - nq] = 1.0
            return v
        blocks = []
        for col in range(nq + n):
            Q, q = qmat(col), qvec(col)
            S = Q @ A
            S = S + S.T
            blocks.append(np.concatenate([S[np.triu_indices(n)], Q @ a + A.T @ q, [q @ a]]))
        rows.append(np.stack(blocks, axis=1))
    K = null_space(np.vstack(rows), rcond=tol)
    x = coordinate_symbols(n)
    X = sp.Matrix(x)
    if K.shape[1] == 0:
        raise UnsupportedError("subalgebra has no polynomial invariant of degree ≤ 2")
    # prefer linear invariants (Q = 0): project the null space onto Q = 0
    Qpart = K[:nq]
    sub_null = null_space(Qpart, rcond=tol)
    if sub_null.shape[1] > 0:
        vec = K[nq:] @ sub_null[:, 0]
        nu = vec / np.linalg.norm(vec)
        nu = nu * np.sign(nu[np.argmax(np.abs(nu))])
        nu = np.where(np.abs(nu) < 1e-14, 0.0, nu)
        expr = sum(sp.nsimplify(float(c), rational=False, tolerance=1e-14) * s for c, s in zip(nu, x))
        return Invariant("plane", sp.sympify(expr), normal=nu)
    if K.shape[1] != 1:
        raise UnsupportedError("invariant is not unique; subalgebra outside the catalog")
    v = K[:, 0]
    Q = np.zeros((n, n))
    for val, (i, j) in zip(v[:nq], sidx):
        Q[i, j] = Q[j, i] = val
    q = v[nq:]
    w, U = np.linalg.eigh(Q)
    if w[-1] < 0:
        Q, q, w = -Q, -q, -w[::-1]
        w, U = np.linalg.eigh(Q)
    nz = np.abs(w) > tol * np.abs(w).max()
    if np.any(w[nz] < 0) or np.ptp(w[nz]) > 1e-8 * w[nz].max():
        raise UnsupportedError("invariant quadric is not round; subalgebra outside the catalog")
    s = w[nz].mean()
    Q, q = Q / s, q / s
    center = np.linalg.lstsq(Q, -q, rcond=None)[0]
    P = sp.Matrix(np.where(np.abs(Q) < 1e-14, 0.0, Q))
    c = sp.Matrix([sp.nsimplify(float(ci), rational=False, tolerance=1e-14) if abs(ci) > 1e-14 else 0
                   for ci in center])
    P = P.applyfunc(lambda e: sp.nsimplify(float(e), rational=False, tolerance=1e-14))
    expr = sp.expand(((X - c).T * P * (X - c))[0, 0])
    if nz.all():
        return Invariant("sphere", expr, center=center)
    axis = U[:, ~nz][:, 0]
    return Invariant("cylinder", expr, center=center, axis=axis)


def invariant_field(sub: Subalgebra, profile: str | sp.Expr = "t") -> ScalarFieldSpec:
    """f = profile(h) with h the catalog invariant of the subalgebra."""
    inv = find_invariant(sub)
    t = sp.Symbol("t", real=True)
    tau = parse_expression(profile, 0, extra={"t": t}) if isinstance(profile, str) else profile
    fld = ScalarFieldSpec.from_sympy(tau.subs(t, inv.expr), sub.n,
                                     f"{profile} ∘ {inv.kind}-invariant {inv.expr}")
    fld.invariant_kind = inv.kind
    return fld


def _rel(num, a, b):
    den = a * b
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = np.abs(num[nz]) / den[nz]
    out[~nz & (np.abs(num) > 0)] = np.inf
    return out


def theorem62_check(f: ScalarFieldSpec, sub: Subalgebra, chart: MetricChart, cloud=None,
                    tol: float = 1e-8, samples: int = 1000, seed: int = 0,
                    eps_grad: float = 1e-6, rank_tol: float = 1e-6) -> dict:
    """Invariance, commutation with Δ and ‖∇f‖²-invariance for every generator.

    Residuals are relative, |X(h)| / (‖X‖ ‖∇h‖) per point (0 when both
    vanish), so that fast-growing profiles are judged on the same scale.
    """
    if not chart.flat:
        raise UnsupportedError("the invariance theorem is checked on flat charts only")
    if cloud is None:
        cloud = sample_domain(chart, f, samples, eps_grad, seed=seed)
    pts = cloud.points if hasattr(cloud, "points") else np.atleast_2d(cloud)
    jet = f.jets(pts, order=3)
    d = derived_fields(chart, jet, pts)
    fam = {"invariance": [], "laplacian": [], "grad_norm": []}
    absolute = {"invariance": [], "laplacian": [], "grad_norm": []}
    for g in sub.generators:
        Xv = g(pts)
        xn = np.linalg.norm(Xv, axis=1)
        for key, grad in (("invariance", jet.grad), ("laplacian", d.du3), ("grad_norm", d.du2)):
            val = np.einsum("na,na->n", Xv, grad)
            fam[key].append(float(_rel(val, xn, np.linalg.norm(grad, axis=1)).max()))
            absolute[key].append(float(np.abs(val).max()))
    eq = equilibrium_test(f, chart, cloud, rank_tol)
    maxima = {k: max(v) for k, v in fam.items()}
    holds = all(v < tol for v in maxima.values()) and eq.passed
    return {"field": f.label, "subalgebra": sub.name, "residuals": maxima,
            "residuals_per_generator": fam, "absolute_residuals": absolute,
            "equilibrium": eq.to_dict(), "holds": bool(holds),
            "invariant": maxima["invariance"] < tol,
            "note": "" if maxima["invariance"] < tol else "field is not invariant: partition not induced by the subgroup"}


def jacobi_residual(X, Y, Z) -> float:
    s = bracket(bracket(X, Y), Z) + bracket(bracket(Y, Z), X) + bracket(bracket(Z, X), Y)
    return float(np.abs(s.coefficients).max())


def catalog_subalgebras(n: int = 3) -> dict:
    """Conjugacy representatives with rank-2 orbits in R³, plus moved copies."""
    if n != 3:
        raise UnsupportedError("the subalgebra catalog is defined for n = 3")
    e = lambda s: named_element(s, 3)  # noqa: E731
    s2 = 1 / np.sqrt(2)
    return {
        "T2": [e("dx"), e("dy")],
        "T2_tilted": [s2 * (e("dx") + e("dy")), e("dz")],
        "E2": [e("dx"), e("dy"), e("Lz")],
        "Lz_dz": [e("Lz"), e("dz")],
        "Lz_dz_shifted": [rotation_about("Lz", [1.0, 0.5, 0.0]), e("dz")],
        "so3": [e("Lx"), e("Ly"), e("Lz")],
        "so3_shifted": [rotation_about(a, [0.5, -0.5, 0.25]) for a in ("Lx", "Ly", "Lz")],
    }


def parse_generators(doc, n: int = 3) -> list:
    """Generators from coefficient vectors or basis-element names."""
    out = []
    for g in doc:
        if isinstance(g, str):
            out.append(named_element(g, n))
        elif isinstance(g, dict):
            out.append(rotation_about(g["rotation"], g.get("center", [0.0] * n), n))
        else:
            out.append(LieElement(np.asarray(g, float), n))
    return out

import json

import numpy as np
import pytest
import sympy as sp

from equilib import geometry as G
from equilib import fibergeom as FG
from equilib.errors import EmptyFiberError, IntervalError, NearCriticalError
from equilib.partition import recover_profiles
from equilib.scalarfield import ScalarFieldSpec, sample_domain

E = G.euclidean(3)
F = ScalarFieldSpec.from_expr
NORM = F("x1^2+x2^2+x3^2", 3)
CYL = F("x1^2+x2^2", 3)
PLANE = F("x1", 3)


def _tangent_eigs(f, p):
    # eigenvalues of H_ab restricted to the orthogonal complement of ∇f (flat chart)
    S = FG.second_fundamental_form(f, E, p)
    grad = f.jets(np.asarray(p, float)[None], order=1).grad[0]
    n = grad / np.linalg.norm(grad)
    basis = np.linalg.svd(np.eye(3) - np.outer(n, n))[0][:, :2]
    return np.sort(np.linalg.eigvalsh(basis.T @ S @ basis))


def test_second_fundamental_form_examples():
    assert np.abs(FG.second_fundamental_form(PLANE, E, [0.3, 1, 2])).max() < 1e-15
    assert np.allclose(_tangent_eigs(NORM, [2 / np.sqrt(3)] * 3), [0.5, 0.5], atol=1e-12)
    assert np.allclose(_tangent_eigs(CYL, [0.6, 0.8, 0.3]), [0, 1], atol=1e-12)
    with pytest.raises(NearCriticalError):
        FG.second_fundamental_form(NORM, E, [0, 0, 0])


def test_mean_curvature_direct_and_profile():
    c = sample_domain(E, NORM, 3000, eps_grad=1e-2, seed=1, box=[[-2, 2]] * 3)
    prof = recover_profiles(NORM, E, c)
    for b in (0.8, 1.5):
        assert FG.mean_curvature(NORM, E, [b, 0, 0]) == pytest.approx(2 / b, rel=1e-12)
        assert abs(FG.mean_curvature_from_profile(prof, b * b) - 2 / b) < 1e-4
    cc = sample_domain(E, CYL, 3000, eps_grad=1e-2, seed=1)
    pc = recover_profiles(CYL, E, cc)
    assert FG.mean_curvature(CYL, E, [0, 1.2, 0.5]) == pytest.approx(1 / 1.2, rel=1e-12)
    assert abs(FG.mean_curvature_from_profile(pc, 1.44) - 1 / 1.2) < 1e-4
    pp = recover_profiles(PLANE, E, sample_domain(E, PLANE, 500, seed=1))
    assert FG.mean_curvature(PLANE, E, [0, 0, 0]) == 0
    assert abs(FG.mean_curvature_from_profile(pp, 0.0)) < 1e-10


def test_principal_and_intrinsic_examples():
    d = FG.principal_and_intrinsic(NORM, E, [0, 2, 0])
    assert np.allclose(d["k"], [0.5, 0.5])
    assert d["K"] == 0 and d["Kbar"] == pytest.approx(0.25) and d["Kprime"] == pytest.approx(0.25)
    d = FG.principal_and_intrinsic(PLANE, E, [0, 0, 0])
    assert d["K"] == d["Kbar"] == d["Kprime"] == 0
    S3 = G.stereographic_sphere(1.0)
    d = FG.principal_and_intrinsic(NORM, S3, [0.3, 0.2, 0.4])
    assert abs(d["K"] - 1) < 1e-10
    assert d["gauss_residual"] < 1e-6 and d["scalar_gauss_residual"] < 1e-6
    E2 = G.euclidean(2)
    d = FG.principal_and_intrinsic(F("x1^2+x2^2", 2), E2, [0.5, 0])
    assert d["k"] == pytest.approx([2.0]) and "intrinsic_error" in d


def test_extract_examples():
    m = FG.extract_fiber(NORM, E, 1.0, 64)
    assert m.n_components == 1 and not m.clipped and m.vertices.shape[0] > 0
    assert m.level_error < 1e-3
    assert np.abs(np.linalg.norm(m.geometry.normal, axis=1) - 1).max() < 1e-10
    assert FG.extract_fiber(PLANE, E, 0.0, 32, box=[[-2, 2]] * 3, geometry=False).clipped
    with pytest.raises(EmptyFiberError):
        FG.extract_fiber(NORM, E, -1.0, 32)


def test_classification_examples():
    s = FG.classify_fiber(FG.extract_fiber(NORM, E, 4.0, 64), E)
    assert s.label == "sphere" and abs(s.b - 2) < 1e-8
    assert FG.classify_fiber(FG.extract_fiber(PLANE, E, 0.0, 32), E).label == "plane"
    c = FG.classify_fiber(FG.extract_fiber(CYL, E, 1.0, 64), E)
    assert (c.label, c.p, c.q) == ("cylinder", 1, 1) and abs(c.b - 1) < 1e-8
    ell = FG.extract_fiber(F("x1^2+2*x2^2+3*x3^2", 3), E, 1.0, 64)
    assert FG.classify_fiber(ell, E).label == "non-constant"
    curved = FG.classify_fiber(FG.extract_fiber(NORM, G.stereographic_sphere(1.0), 0.5, 48), G.stereographic_sphere(1.0))
    assert curved.label == "constant-principal-curvatures"


def test_power_sums():
    ps = FG.power_sum_constancy(FG.extract_fiber(CYL, E, 2.25, 128))
    assert ps["mean"][0] == pytest.approx(1 / 1.5, rel=1e-8)
    assert ps["mean"][1] == pytest.approx(1 / 2.25, rel=1e-8)
    assert max(ps["cv"]) < 1e-3
    ell = FG.power_sum_constancy(FG.extract_fiber(F("x1^2+2*x2^2+3*x3^2", 3), E, 1.0, 64))
    assert min(ell["cv"]) > 0.1
    pl = FG.power_sum_constancy(FG.extract_fiber(PLANE, E, 0.5, 32))
    assert np.allclose(pl["mean"], 0, atol=1e-14)


def test_gauss_equation_residuals_on_curved_charts():
    for chart, lv in ((G.stereographic_sphere(1.0), 0.5), (G.poincare_ball(-1.0), 0.2)):
        m = FG.extract_fiber(NORM, chart, lv, 48)
        g = m.geometry
        assert g.gauss_residual.max() < 1e-6
        assert g.scalar_gauss_residual.max() < 1e-6
        assert np.abs(g.K - g.K_ricci).max() < 1e-6
        cl = FG.classify_fiber(m, chart)
        assert cl.curvature_cv < 1e-3 and cl.H_cv < 1e-3


def test_offset_mean_curvature_identity_symbolic():
    r = sp.Symbol("r")
    for m in (2, 3):
        ks = sp.symbols(f"k1:{m + 1}")
        e = [sum(sp.prod(c) for c in __import__("itertools").combinations(ks, j)) for j in range(m + 1)]
        lhs = sum(k / (1 + r * k) for k in ks)
        rhs = sum(j * e[j] * r ** (j - 1) for j in range(1, m + 1)) / sp.prod([1 + r * k for k in ks])
        assert sp.simplify(lhs - rhs) == 0
    k = np.array([[0.7, -0.2], [1.0, 0.0]])
    assert np.allclose(FG.offset_mean_curvature(k, 0.5), np.sum(k / (1 + 0.5 * k), axis=1), atol=1e-15)


@pytest.mark.parametrize("f,c1,c2,ds", [(NORM, 1.0, 4.0, 1.0), (PLANE, 0.0, 2.0, 2.0), (CYL, 1.0, 9.0, 2.0)])
def test_geodesic_offset_examples(f, c1, c2, ds):
    chart = G.euclidean(3, [[-3.5, 3.5]] * 3) if f is not PLANE else G.euclidean(3, [[-3, 3]] * 3)
    rep = FG.geodesic_offset(f, chart, c1, c2)
    assert abs(rep.geodesic_distance - ds) < 1e-4
    assert rep.flow_residual < 1e-8
    assert rep.shooting_agreement < 1e-4


def test_geodesic_offset_interval_errors():
    with pytest.raises(IntervalError):
        FG.geodesic_offset(NORM, E, 4.0, 1.0)


def test_parallel_curvature_spheres_and_cylinders():
    s1, s2 = FG.extract_fiber(NORM, E, 1.0, 64), FG.extract_fiber(NORM, E, 4.0, 64)
    rep = FG.parallel_curvature_check(s1, s2, 1.0, E, NORM)
    assert rep["offset_curvature_residual"] < 1e-6 and rep["offset_mean_curvature_residual"] < 1e-6
    assert np.allclose(FG.vertex_geometry(NORM, E, s2.vertices[:5]).k, 0.5)
    big = G.euclidean(3, [[-4, 4]] * 3)
    c1, c3 = FG.extract_fiber(CYL, big, 1.0, 96), FG.extract_fiber(CYL, big, 9.0, 96)
    rep = FG.parallel_curvature_check(c1, c3, 2.0, big, CYL)
    assert rep["offset_curvature_residual"] < 1e-6 and rep["pairs"] > 0
    assert np.allclose(np.sort(FG.vertex_geometry(CYL, big, [[3, 0, 0]]).k), [0, 1 / 3])
    p0, p1 = FG.extract_fiber(PLANE, E, 0.0, 32), FG.extract_fiber(PLANE, E, 1.5, 32)
    assert FG.parallel_curvature_check(p0, p1, 1.5, E, PLANE)["offset_curvature_residual"] == 0


def test_topology_invariance():
    assert FG.topology_invariance(NORM, E, [1, 4], grid=48)["levels"][0]["chi"] == [2]
    t = FG.topology_invariance(NORM, E, [1, 2], grid=48)
    assert t["verdict"] == "invariant"
    assert FG.topology_invariance(PLANE, E, [0, 1], grid=24)["verdict"] == "indeterminate (clipped)"


def test_write_off(tmp_path):
    m = FG.extract_fiber(NORM, E, 1.0, 24)
    path = tmp_path / "s.off"
    FG.write_off(m, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "OFF"
    nv, nf, _ = map(int, lines[1].split())
    assert nv == m.vertices.shape[0] and nf == m.faces.shape[0]
    side = json.loads((tmp_path / "s.json").read_text())
    assert len(side["per_vertex"]["H"]) == nv


def test_fiber_report_keys():
    rep = FG.fiber_report(FG.extract_fiber(NORM, G.stereographic_sphere(1.0), 0.5, 32), G.stereographic_sphere(1.0))
    comp = rep["components"][0]
    assert {"gauss_residual_max", "scalar_gauss_residual_max", "K_vs_ricci_max"} <= set(comp)

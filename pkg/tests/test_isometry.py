import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from equilib import geometry as G
from equilib import isometry as I
from equilib.errors import NotClosedError, RankError, UnsupportedError
from equilib.scalarfield import ScalarFieldSpec

x = sp.symbols("x1:4")
E = G.euclidean(3)


def sym_field(el):
    A, a = el.affine()
    return [sum(sp.nsimplify(A[i, j]) * x[j] for j in range(3)) + sp.nsimplify(a[i]) for i in range(3)]


def sym_bracket(X, Y):
    # [X, Y]^i = X^j ∂_j Y^i − Y^j ∂_j X^i
    return [sp.expand(sum(X[j] * sp.diff(Y[i], x[j]) - Y[j] * sp.diff(X[i], x[j]) for j in range(3)))
            for i in range(3)]


def same(el, vec):
    return all(sp.simplify(a - b) == 0 for a, b in zip(sym_field(el), vec))


def test_bracket_examples():
    dx, dy, dz, Lz = (I.named_element(s) for s in ("dx", "dy", "dz", "Lz"))
    assert np.all(I.bracket(dx, dy).coefficients == 0)
    assert np.array_equal(I.bracket(Lz, dx).coefficients, (-dy).coefficients)
    Lzx = I.named_element("L13")  # x∂z − z∂x
    Lyz = I.named_element("L23")  # y∂z − z∂y
    assert np.array_equal(I.bracket(Lz, Lzx).coefficients, (-Lyz).coefficients)


def test_bracket_matches_symbolic_oracle_on_basis():
    for i in range(6):
        for j in range(6):
            X, Y = I.LieElement.basis(3, i), I.LieElement.basis(3, j)
            assert same(I.bracket(X, Y), sym_bracket(sym_field(X), sym_field(Y)))
    X = I.rotation_about("Lx", [1, 2, 3]) + 0.5 * I.named_element("dy")
    Y = I.named_element("Lz") + I.named_element("dx")
    assert same(I.bracket(X, Y), sym_bracket(sym_field(X), sym_field(Y)))


def test_evaluation_is_exact():
    Lz = I.named_element("Lz")
    assert np.array_equal(Lz(np.array([[2.0, 3.0, 5.0]])), [[-3.0, 2.0, 0.0]])


def test_subalgebra_examples():
    s = I.verify_subalgebra([I.named_element("dx"), I.named_element("dy")], E)
    assert s.abelian and s.generic_rank == 2
    s = I.verify_subalgebra([I.named_element("Lz"), I.named_element("dz")], E)
    assert s.abelian and s.generic_rank == 2 and s.rank_defect_locus == ["x3-axis"]
    with pytest.raises(NotClosedError) as err:
        I.verify_subalgebra([I.named_element("dx"), I.named_element("Lz")], E)
    assert np.array_equal(err.value.bracket.coefficients, I.named_element("dy").coefficients)
    with pytest.raises(RankError):
        I.verify_subalgebra([I.named_element("dx")], E)


def test_so3_structure_constants():
    s = I.verify_subalgebra([I.named_element(a) for a in ("Lx", "Ly", "Lz")], E)
    assert s.generic_rank == 2 and not s.abelian
    # [Lx, Ly] = −Lz with Lx = y∂z − z∂y etc. (from the symbolic bracket)
    Lx, Ly, Lz = (sym_field(I.named_element(a)) for a in ("Lx", "Ly", "Lz"))
    assert all(sp.simplify(a + b) == 0 for a, b in zip(sym_bracket(Lx, Ly), Lz))
    assert s.structure_constants[0, 1, 2] == -1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=18, max_size=18))
def test_jacobi_identity(c):
    X, Y, Z = (I.LieElement(np.array(c[k * 6:(k + 1) * 6], float), 3) for k in range(3))
    assert I.jacobi_residual(X, Y, Z) <= 1e-12


def test_invariant_fields():
    cat = I.catalog_subalgebras()
    pts = np.random.default_rng(0).uniform(-2, 2, (1000, 3))
    T2 = I.verify_subalgebra(cat["T2"], E)
    f = I.invariant_field(T2, "t^3")
    assert np.allclose(f.value(pts), pts[:, 2] ** 3)
    so3 = I.verify_subalgebra(cat["so3"], E)
    assert np.allclose(I.invariant_field(so3).value(pts), np.sum(pts**2, axis=1))
    c = I.verify_subalgebra(cat["Lz_dz"], E)
    g = I.invariant_field(c, "exp(t)")
    assert np.allclose(g.value(pts), np.exp(pts[:, 0] ** 2 + pts[:, 1] ** 2))
    for sub, fld in ((T2, f), (so3, I.invariant_field(so3)), (c, g)):
        grad = fld.jets(pts, order=1).grad
        for gen in sub.generators:
            assert np.abs(np.einsum("na,na->n", gen(pts), grad)).max() < 1e-12 * max(1, np.abs(grad).max())


def test_theorem62_examples():
    cat = I.catalog_subalgebras()
    T2 = I.verify_subalgebra(cat["T2"], E)
    rep = I.theorem62_check(ScalarFieldSpec.from_expr("x3^3", 3), T2, E)
    assert rep["holds"] and max(rep["residuals"].values()) < 1e-10
    c = I.verify_subalgebra(cat["Lz_dz"], E)
    assert I.theorem62_check(ScalarFieldSpec.from_expr("exp(x1^2+x2^2)", 3), c, E)["holds"]
    bad = I.theorem62_check(ScalarFieldSpec.from_expr("x1^2+2*x2^2", 3), T2, E)
    assert not bad["holds"] and not bad["invariant"] and bad["residuals"]["invariance"] > 0.1


@pytest.mark.parametrize("name", sorted(I.catalog_subalgebras()))
@pytest.mark.parametrize("profile", ["t", "t^3+t", "exp(t)", "log(t+2)"])
def test_full_catalog(name, profile):
    sub = I.verify_subalgebra(I.catalog_subalgebras()[name], E, name=name)
    f = I.invariant_field(sub, profile)
    box = [[-1.2, 1.2]] * 3
    from equilib.scalarfield import sample_domain
    region = None
    if profile == "log(t+2)":
        region = lambda p: np.isfinite(f.value(p))  # noqa: E731
    cloud = sample_domain(G.euclidean(3, box), f, 500, 1e-6, seed=1, region=region)
    rep = I.theorem62_check(f, sub, G.euclidean(3, box), cloud)
    assert rep["holds"], rep["residuals"]
    assert max(rep["residuals"].values()) < 1e-8


def test_unsupported_chart():
    sub = I.verify_subalgebra(I.catalog_subalgebras()["so3"], E)
    with pytest.raises(UnsupportedError):
        I.theorem62_check(ScalarFieldSpec.from_expr("x1^2+x2^2+x3^2", 3), sub, G.stereographic_sphere(1.0))


def test_parse_generators():
    gens = I.parse_generators(["dx", [0, 1, 0, 0, 0, 0], {"rotation": "Lz", "center": [1, 0, 0]}])
    assert np.array_equal(gens[1].coefficients, I.named_element("dy").coefficients)
    assert np.allclose(gens[2](np.array([[1.0, 0, 0]])), 0)


def test_fiber_labels_name_the_orbits():
    from equilib.fibergeom import classify_fiber, extract_fiber
    cat = I.catalog_subalgebras()
    expect = {"T2": ("plane", 0.5), "Lz_dz": ("cylinder", 1.0), "so3": ("sphere", 1.0)}
    for name, (label, level) in expect.items():
        f = I.invariant_field(I.verify_subalgebra(cat[name], E))
        assert classify_fiber(extract_fiber(f, E, level, 64), E).label == label

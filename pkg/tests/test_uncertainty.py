import numpy as np
import pytest
from hypothesis import given, strategies as st

from robust_ilc.uncertainty import (Box, EmptySet, EmptyTightenedSet, Polytope, UncertaintySet,
                                    blend_model, build_tightened_set, pontryagin_diff,
                                    robust_output_check)


# -- Box / Polytope -----------------------------------------------------------------

def test_box_rejects_inverted_interval_naming_coordinate():
    with pytest.raises(ValueError, match="coordinate 1"):
        Box([0.0, 2.0], [1.0, 1.0])


def test_box_halfspaces_skip_infinite_bounds():
    A, b = Box([-1.0, -np.inf], [np.inf, 2.0]).halfspaces()
    np.testing.assert_array_equal(A, [[0, 1], [-1, 0]])
    np.testing.assert_array_equal(b, [2, 1])


def test_box_support_function():
    D = Box([-0.1, -0.2], [0.3, 0.2])
    np.testing.assert_allclose(D.support(np.array([[1.0, -1.0], [-2.0, 0.0]])), [0.5, 0.2])


def test_polytope_rejects_zero_row():
    with pytest.raises(ValueError, match="zero row"):
        Polytope([[0.0, 0.0]], [1.0])


def test_polytope_emptiness_is_cached():
    P = Polytope([[1.0], [-1.0]], [-1.0, 0.0])
    assert P.is_empty()
    assert P.feasibility is P.feasibility


# -- pontryagin_diff -------------------------------------------------------------------

def test_interval_shrink():
    res = pontryagin_diff(Box([-1.0], [1.0]), Box([-0.2], [0.2]))
    np.testing.assert_allclose([res.lower[0], res.upper[0]], [-0.8, 0.8])


def test_halfspace_shrink_by_support():
    res = pontryagin_diff(Polytope([[1.0, 1.0]], [1.0]), Box.symmetric(0.1, 2))
    np.testing.assert_allclose(res.b, [0.8])
    np.testing.assert_array_equal(res.A, [[1.0, 1.0]])


def test_empty_markers():
    assert isinstance(pontryagin_diff(Box([-0.1], [0.1]), Box([-0.2], [0.2])), EmptySet)
    Y = Polytope([[1.0], [-1.0]], [0.1, 0.1])
    assert isinstance(pontryagin_diff(Y, Box([-0.2], [0.2])), EmptySet)


def test_pontryagin_preconditions():
    with pytest.raises(ValueError):
        pontryagin_diff(Box([-1.0], [1.0]), Box([0.1], [0.2]))
    with pytest.raises(ValueError):
        pontryagin_diff(Box([-1.0], [1.0]), Box([-np.inf], [0.2]))


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 3), h=st.integers(1, 6))
def test_pontryagin_sampling_oracle(seed, dim, h):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(h, dim))
    b = rng.uniform(0.5, 2.0, h)  # contains a ball around 0
    Y = Polytope(A, b)
    D = Box(-rng.uniform(0, 0.2, dim), rng.uniform(0, 0.2, dim))
    res = pontryagin_diff(Y, D)
    if isinstance(res, EmptySet):
        return
    verts = D.vertices()
    pts = rng.uniform(-4, 4, size=(1000, dim))
    for y in pts:
        if Y.contains(y, tol=0.0) and not res.contains(y, tol=0.0):
            # y in Y but not in the difference: some vertex of D pushes it out
            assert any(not Y.contains(y + d, tol=0.0) for d in verts)
        if res.contains(y, tol=0.0):
            for d in (verts[rng.integers(len(verts))], D.lower + (D.upper - D.lower) * rng.random(dim)):
                assert Y.contains(y + d, tol=1e-9)


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 6))
def test_box_difference_commutes_with_permutation(seed, dim):
    rng = np.random.default_rng(seed)
    lo = -rng.uniform(0.5, 2, dim)
    hi = rng.uniform(0.5, 2, dim)
    D = Box(-rng.uniform(0, 0.4, dim), rng.uniform(0, 0.4, dim))
    perm = rng.permutation(dim)
    a = pontryagin_diff(Box(lo, hi), D)
    b = pontryagin_diff(Box(lo[perm], hi[perm]), Box(D.lower[perm], D.upper[perm]))
    np.testing.assert_array_equal(a.lower[perm], b.lower)
    np.testing.assert_array_equal(a.upper[perm], b.upper)


# -- build_tightened_set ---------------------------------------------------------------------

def single(n):
    return UncertaintySet([np.eye(n)], [np.zeros(n)])


def box_of(X, n):
    """Read off the bounding box of X by projection with a brute-force LP-free sweep."""
    lo, hi = [], []
    for i in range(n):
        rows = X.A[:, i]
        hi.append(min(X.b[j] / rows[j] for j in range(len(rows)) if rows[j] > 0))
        lo.append(max(X.b[j] / rows[j] for j in range(len(rows)) if rows[j] < 0))
    return np.array(lo), np.array(hi)


def test_identity_vertex_recovers_output_box():
    X = build_tightened_set(None, Box.symmetric(1.0, 3), Box.symmetric(0.0, 3), single(3))
    lo, hi = box_of(X, 3)
    np.testing.assert_allclose(lo, -1)
    np.testing.assert_allclose(hi, 1)


def test_disturbance_tightens():
    X = build_tightened_set(None, Box.symmetric(1.0, 2), Box.symmetric(0.3, 2), single(2))
    lo, hi = box_of(X, 2)
    np.testing.assert_allclose(lo, -0.7)
    np.testing.assert_allclose(hi, 0.7)


def test_two_vertex_intersection():
    unc = UncertaintySet([[[1.0]], [[2.0]]], [[0.0], [0.0]])
    X = build_tightened_set(None, Box([-1.0], [1.0]), Box([0.0], [0.0]), unc)
    grid = np.linspace(-1.5, 1.5, 3001)
    inside = grid[[X.contains([g], tol=0.0) for g in grid]]
    np.testing.assert_allclose([inside.min(), inside.max()], [-0.5, 0.5], atol=1e-3)
    assert X.contains([0.5], tol=1e-12) and not X.contains([0.5001], tol=0.0)


def test_empty_tightening_carries_certificate():
    unc = UncertaintySet([[[1.0]], [[1.0]]], [[2.0], [-2.0]])
    with pytest.raises(EmptyTightenedSet) as info:
        build_tightened_set(Box([-10.0], [10.0]), Box([-1.0], [1.0]), Box([0.0], [0.0]), unc)
    lam = info.value.certificate
    X_A = np.array([[1.0], [-1.0], [1.0], [-1.0], [1.0], [-1.0]])
    X_b = np.array([10, 10, -1, 3, 3, -1], dtype=float)
    assert lam is not None and np.all(lam >= 0)
    assert abs(lam @ X_A[:, 0]) <= 1e-8 and lam @ X_b < 0


def test_output_difference_empty():
    with pytest.raises(EmptyTightenedSet):
        build_tightened_set(None, Box([-0.1], [0.1]), Box([-0.2], [0.2]), single(1))


def test_row_origin_and_input_rows():
    X = build_tightened_set(Box.symmetric(5.0, 2), Box.symmetric(1.0, 2), Box.symmetric(0.0, 2), single(2))
    assert (X.row_origin[:, 0] == -1).sum() == 4
    assert (X.row_origin[:, 0] == 0).sum() == 4


# -- robust_output_check ------------------------------------------------------------------------

def random_unc(rng, m, n, N):
    G0 = rng.normal(size=(m, n))
    return UncertaintySet([G0 * (1 + 0.2 * rng.uniform(-1, 1, (m, n))) for _ in range(N)],
                          [0.1 * rng.normal(size=m) for _ in range(N)])


def test_check_witnesses(rng):
    unc = random_unc(rng, 4, 2, 3)
    U, Y, D = Box.symmetric(1.0, 2), Box.symmetric(3.0, 4), Box.symmetric(0.1, 4)
    X = build_tightened_set(U, Y, D, unc)
    assert robust_output_check(unc, U, Y, D, X.feasibility.point)
    bad = robust_output_check(unc, U, Y, D, np.array([1.5, 0.0]))
    assert not bad and bad.kind == "input" and bad.violation == pytest.approx(0.5)
    far = robust_output_check(unc, None, Y, D, np.array([50.0, 50.0]))
    assert not far and far.kind == "output" and far.vertex is not None and far.violation > 0


def test_projection_output_passes_check(rng):
    from robust_ilc.qp import weighted_projection
    unc = random_unc(rng, 5, 3, 2)
    U, Y, D = Box.symmetric(2.0, 3), Box.symmetric(2.0, 5), Box.symmetric(0.05, 5)
    X = build_tightened_set(U, Y, D, unc)
    for _ in range(20):
        v = weighted_projection(rng.normal(scale=5, size=3), np.eye(3), X)
        assert X.check(v, tol=1e-8)


@given(seed=st.integers(0, 2**32 - 1))
def test_tightening_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    m, n, N = 4, 3, 3
    unc = random_unc(rng, m, n, N)
    U, Y = Box.symmetric(1.5, n), Box.symmetric(2.5, m)
    D = Box(-rng.uniform(0, 0.2, m), rng.uniform(0, 0.2, m))
    try:
        X = build_tightened_set(U, Y, D, unc)
    except EmptyTightenedSet:
        return
    from robust_ilc.qp import weighted_projection
    u = weighted_projection(rng.normal(scale=3, size=n), np.eye(n), X)
    for _ in range(100):
        G, w = blend_model(unc, rng.dirichlet(np.ones(N)))
        for d in D.vertices():
            assert Y.contains(G @ u + w + d, tol=1e-9)
    d = D.lower + (D.upper - D.lower) * rng.random((1000, m))
    G, w = blend_model(unc, rng.dirichlet(np.ones(N)))
    assert np.all(np.abs(G @ u + w + d) <= 2.5 + 1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_tightened_set_is_convex(seed):
    rng = np.random.default_rng(seed)
    unc = random_unc(rng, 4, 3, 2)
    X = build_tightened_set(Box.symmetric(1.0, 3), Box.symmetric(3.0, 4), Box.symmetric(0.1, 4), unc)
    pts = [p for p in rng.uniform(-1, 1, (200, 3)) if X.contains(p, tol=0.0)]
    for a, b in zip(pts[::2], pts[1::2]):
        assert X.contains(0.5 * (a + b), tol=1e-12)


# -- blend_model -------------------------------------------------------------------------------

def test_vertex_selection(rng):
    unc = random_unc(rng, 3, 2, 4)
    for i in range(4):
        M, wM = blend_model(unc, np.eye(4)[i])
        np.testing.assert_array_equal(M, unc.G[i])
        np.testing.assert_array_equal(wM, unc.w[i])


def test_midpoint_blend():
    unc = UncertaintySet([np.zeros((2, 2)), 2 * np.eye(2)], [np.zeros(2), np.zeros(2)])
    M, _ = blend_model(unc, [0.5, 0.5])
    np.testing.assert_array_equal(M, np.eye(2))


@given(seed=st.integers(0, 2**32 - 1))
def test_blend_entrywise_bounds(seed):
    rng = np.random.default_rng(seed)
    unc = random_unc(rng, 3, 3, 4)
    M, _ = blend_model(unc, rng.dirichlet(np.ones(4)))
    stack = np.array(unc.G)
    assert np.all(M >= stack.min(axis=0) - 1e-15) and np.all(M <= stack.max(axis=0) + 1e-15)


def test_blend_rejects_off_simplex(rng):
    unc = random_unc(rng, 2, 2, 2)
    with pytest.raises(ValueError):
        blend_model(unc, [0.6, 0.6])
    with pytest.raises(ValueError):
        blend_model(unc, [1.1, -0.1])
    with pytest.raises(ValueError):
        blend_model(unc, [1.0])
    M, _ = blend_model(unc, [1.0 + 5e-13, -5e-13])  # within tolerance, clipped
    np.testing.assert_allclose(M, unc.G[0])


def test_uncertainty_dimension_mismatch():
    with pytest.raises(ValueError, match="vertex 1"):
        UncertaintySet([np.eye(2), np.eye(3)], [np.zeros(2), np.zeros(3)])

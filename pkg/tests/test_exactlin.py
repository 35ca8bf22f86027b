import random
from fractions import Fraction
from itertools import combinations, permutations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rand_invertible, rand_matrix
from s2tower.errors import (
    EmptySetError,
    InvalidBasisError,
    InvalidInputError,
    InvalidInvolutionError,
)
from s2tower.exactlin import (
    Involution,
    Matrix,
    ProjectiveHyperplane,
    ProjectivePoint,
    as_rational,
    general_position,
    in_neighborhood,
    is_eigenvector,
    nullspace,
    proj_distance_sq,
    projector,
    rank,
    rat_str,
    scalar_from_eigenvectors,
    scalar_on_subspace,
    wedge_norm_sq,
)

rationals = st.fractions(min_value=-10, max_value=10, max_denominator=10)


def vectors(n):
    return st.lists(rationals, min_size=n, max_size=n).filter(lambda v: any(v))


def matrices(n):
    return st.lists(st.lists(rationals, min_size=n, max_size=n), min_size=n, max_size=n).map(Matrix)


# -- oracles ------------------------------------------------------------------


def leibniz_det(rows):
    n = len(rows)
    total = Fraction(0)
    for perm in permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        term = Fraction(-1 if inv % 2 else 1)
        for i in range(n):
            term *= rows[i][perm[i]]
        total += term
    return total


def gram_independent(vs) -> bool:
    gram = [[sum(a * b for a, b in zip(u, v)) for v in vs] for u in vs]
    return leibniz_det(gram) != 0


def wedge_components_sq(v, w) -> Fraction:
    n = len(v)
    return sum((v[i] * w[j] - v[j] * w[i]) ** 2 for i in range(n) for j in range(i + 1, n))


def brute_scalar(b: Matrix):
    n = b.n
    if any(b[i, j] != 0 for i in range(n) for j in range(n) if i != j):
        return None
    d = {b[i, i] for i in range(n)}
    return d.pop() if len(d) == 1 else None


def lstsq_scalar(m: Matrix, basis):
    # solve the stacked system M w_i = lam w_i for one unknown lam
    a = [x for w in basis for x in w]
    b = [x for w in basis for x in m @ w]
    lam = sum(x * y for x, y in zip(a, b)) / sum(x * x for x in a)
    return lam if all(lam * x == y for x, y in zip(a, b)) else None


# -- matrices --------------------------------------------------------------------


def test_identity_and_diag():
    assert Matrix.identity(3).is_identity()
    assert Matrix.diag([2, 2, 2]).is_scalar()
    assert Matrix.diag([1, 2, 3]).det() == 6


def test_inverse_of_singular_matrix_raises():
    with pytest.raises(Exception):
        Matrix([[1, 2], [2, 4]]).inverse()


@settings(max_examples=60, deadline=None)
@given(matrices(3), matrices(3))
def test_det_multiplicative_against_leibniz(a, b):
    assert (a @ b).det() == leibniz_det((a @ b).rows) == a.det() * b.det()


@settings(max_examples=60, deadline=None)
@given(matrices(3))
def test_inverse_is_two_sided(m):
    if m.det() == 0:
        return
    mi = m.inverse()
    assert (m @ mi).is_identity() and (mi @ m).is_identity()


@settings(max_examples=60, deadline=None)
@given(matrices(4))
def test_json_round_trip(m):
    assert Matrix.from_json(m.to_json()) == m


@given(rationals)
def test_rat_str_round_trip(q):
    assert as_rational(rat_str(q)) == q


def test_columns_and_from_columns_agree():
    m = Matrix([[1, 2], [3, 4]])
    assert Matrix.from_columns(m.columns()) == m
    assert m.column(1) == (2, 4)


# -- projective geometry -----------------------------------------------------------


def test_wedge_example():
    assert proj_distance_sq(ProjectivePoint([1, 0]), ProjectivePoint([1, 1])) == Fraction(1, 2)


@settings(max_examples=100, deadline=None)
@given(vectors(4), vectors(4))
def test_wedge_norm_matches_explicit_wedge(v, w):
    assert wedge_norm_sq(v, w) == wedge_components_sq(v, w)


@settings(max_examples=80, deadline=None)
@given(vectors(3), rationals.filter(lambda q: q != 0))
def test_point_canonical_form_ignores_scaling(v, c):
    assert ProjectivePoint(v) == ProjectivePoint([c * x for x in v])


def test_zero_vector_has_no_point():
    with pytest.raises(InvalidInputError):
        ProjectivePoint([0, 0, 0])


def _triangle_holds(dxy, dyz, dxz) -> bool:
    # d(x,z) <= d(x,y) + d(y,z) in squared form, without square roots
    excess = dxz - dxy - dyz
    return excess <= 0 or excess * excess <= 4 * dxy * dyz


@settings(max_examples=150, deadline=None)
@given(vectors(3), vectors(3), vectors(3))
def test_metric_axioms(a, b, c):
    x, y, z = ProjectivePoint(a), ProjectivePoint(b), ProjectivePoint(c)
    dxy, dyz, dxz = proj_distance_sq(x, y), proj_distance_sq(y, z), proj_distance_sq(x, z)
    assert 0 <= dxy <= 1
    assert dxy == proj_distance_sq(y, x)
    assert (dxy == 0) == (x == y)
    assert proj_distance_sq(x, x) == 0
    assert _triangle_holds(dxy, dyz, dxz)


@settings(max_examples=60, deadline=None)
@given(matrices(3), vectors(3), vectors(3))
def test_invertible_matrices_act_injectively(m, a, b):
    if m.det() == 0:
        return
    x, y = ProjectivePoint(a), ProjectivePoint(b)
    assert (x == y) == (x.image(m) == y.image(m))


def test_hyperplane_membership_by_inner_product():
    h = ProjectiveHyperplane.spanned_by([[1, 0, 0], [0, 1, 0]])
    assert h.contains([3, -2, 0])
    assert not h.contains(ProjectivePoint([0, 0, 1]))
    with pytest.raises(InvalidBasisError):
        ProjectiveHyperplane.spanned_by([[1, 0, 0], [2, 0, 0]])


def test_neighbourhood():
    pts = [ProjectivePoint([1, 0])]
    assert in_neighborhood(ProjectivePoint([10, 1]), pts, Fraction(1, 50))
    assert not in_neighborhood(ProjectivePoint([1, 1]), pts, Fraction(1, 2))
    with pytest.raises(EmptySetError):
        in_neighborhood(ProjectivePoint([1, 1]), [], 1)


# -- involutions and projectors --------------------------------------------------


def test_involution_rejections():
    with pytest.raises(InvalidInvolutionError):
        Involution.from_matrix(Matrix.diag([1, 1, -1]))  # det -1
    with pytest.raises(InvalidInvolutionError):
        Involution.from_matrix(Matrix.identity(3))
    with pytest.raises(InvalidInvolutionError):
        Involution.from_matrix(Matrix([[1, 1], [0, 1]]))


def test_standard_involution_eigenspaces():
    t = Involution.standard(6, 4)
    assert (t.n, t.r, len(t.w_minus)) == (6, 4, 2)
    for w in t.w_plus:
        assert t.matrix @ w == w
    for w in t.w_minus:
        assert t.matrix @ w == tuple(-x for x in w)


@pytest.mark.parametrize("seed", range(10))
def test_projector_idempotent_on_conjugated_involution(seed):
    rng = random.Random(seed)
    c = rand_invertible(rng, 5)
    t = Involution.from_matrix(c @ Matrix.diag([1, 1, 1, -1, -1]) @ c.inverse())
    pr = projector(t)
    assert pr @ pr == pr
    assert rank(pr.rows) == 3
    for w in t.w_plus:
        assert pr @ w == w
    for w in t.w_minus:
        assert not any(pr @ w)


# -- eigen-tests -------------------------------------------------------------------


def test_eigenvector_on_jordan_block():
    rng = random.Random(3)
    c = rand_invertible(rng, 4)
    jordan = Matrix([[2, 1, 0, 0], [0, 2, 0, 0], [0, 0, 3, 0], [0, 0, 0, 5]])
    m = c @ jordan @ c.inverse()
    e1, e2 = c.column(0), c.column(1)
    assert is_eigenvector(m, e1) and wedge_components_sq(m @ e1, e1) == 0
    assert not is_eigenvector(m, e2) and wedge_components_sq(m @ e2, e2) != 0


def test_eigenvalue_zero_counts():
    assert is_eigenvector(Matrix([[0, 0], [0, 1]]), [1, 0])


@pytest.mark.parametrize("seed", range(20))
def test_scalar_on_subspace_against_linear_solve(seed):
    rng = random.Random(seed)
    t = Involution.standard(6, 4)
    g = rand_invertible(rng, 6)
    m = projector(t) @ g
    assert scalar_on_subspace(m, t.w_plus) == lstsq_scalar(m, t.w_plus)
    # a matrix built to be scalar on W+
    s = Matrix.diag([3, 3, 3, 3, 1, 2])
    assert scalar_on_subspace(s, t.w_plus) == lstsq_scalar(s, t.w_plus) == 3


def test_scalar_on_subspace_requires_independent_basis():
    with pytest.raises(InvalidBasisError):
        scalar_on_subspace(Matrix.identity(2), [[1, 0], [2, 0]])


@pytest.mark.parametrize("seed", range(30))
def test_general_position_against_subset_ranks(seed):
    rng = random.Random(seed)
    vs = [[Fraction(rng.randint(-2, 2)) for _ in range(4)] for _ in range(5)]
    if seed % 3 == 0:
        vs[4] = [a + b for a, b in zip(vs[0], vs[1])]  # forces a dependent triple
    expected = all(
        gram_independent(sub) for k in range(1, 5) for sub in combinations(vs, k)
    )
    assert general_position(vs) == expected


def test_general_position_shape_checks():
    with pytest.raises(InvalidInputError):
        general_position([[1, 0], [0, 1]])


@pytest.mark.parametrize("seed", range(20))
def test_scalar_from_eigenvectors_matches_definition(seed):
    rng = random.Random(seed)
    n = 4
    vs = [rand_matrix(rng, n).column(0) for _ in range(n)] + [(1,) * n]
    while not general_position(vs):
        vs = [rand_matrix(rng, n).column(0) for _ in range(n)] + [(1,) * n]
    b = Matrix.scalar(n, Fraction(rng.randint(1, 9), 7)) if seed % 2 else rand_matrix(rng, n)
    assert scalar_from_eigenvectors(b, vs) == brute_scalar(b)


@pytest.mark.parametrize("seed", range(15))
def test_non_scalar_has_at_most_r_eigenvectors_in_general_position(seed):
    rng = random.Random(100 + seed)
    n = 3
    # diagonalizable with a repeated eigenvalue: the largest eigenspace has dim 2
    c = rand_invertible(rng, n)
    b = c @ Matrix.diag([2, 2, 5]) @ c.inverse()
    cols = c.columns()
    fam = [cols[0], cols[1], tuple(a + d for a, d in zip(cols[0], cols[1])),
           tuple(a + d + e for a, d, e in zip(*cols))]
    if not general_position(fam):
        return
    count = sum(is_eigenvector(b, v) for v in fam)
    assert count <= n
    assert scalar_from_eigenvectors(b, fam) is None


def test_nullspace_and_rank():
    rows = [[1, 2, 3], [2, 4, 6]]
    ns = nullspace(rows)
    assert len(ns) == 2 and rank(rows) == 1
    for v in ns:
        assert all(sum(a * b for a, b in zip(r, v)) == 0 for r in rows)

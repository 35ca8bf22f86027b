"""Exact rational linear algebra and projective geometry.

Every number in the package is a :class:`fractions.Fraction`; a matrix is a
square array stored as integer numerators over one common denominator, which
keeps products cheap and makes equality and hashing exact.
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

from .errors import (
    EmptySetError,
    InvalidBasisError,
    InvalidInputError,
    InvalidInvolutionError,
)

Rational = Fraction
Vector = tuple  # tuple[Fraction, ...]


def as_rational(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(x)


def rat_str(q: Fraction) -> str:
    """Canonical "p/q" (or "p") string for a rational."""
    q = Fraction(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def vector(xs: Iterable) -> Vector:
    return tuple(as_rational(x) for x in xs)


def dot(u: Sequence, v: Sequence) -> Fraction:
    return sum((a * b for a, b in zip(u, v)), Fraction(0))


def is_zero_vector(v: Sequence) -> bool:
    return all(x == 0 for x in v)


def unit_vector(n: int, i: int) -> Vector:
    return tuple(Fraction(int(j == i)) for j in range(n))


# -- row reduction --------------------------------------------------------


def _rref(rows: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form (in place) and the pivot columns."""
    m = len(rows)
    ncols = len(rows[0]) if rows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        if r == m:
            break
        piv = next((i for i in range(r, m) if rows[i][c] != 0), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        p = rows[r][c]
        if p != 1:
            rows[r] = [x / p for x in rows[r]]
        for i in range(m):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
    return rows, pivots


def rank(vectors: Sequence[Sequence]) -> int:
    if not vectors:
        return 0
    _, pivots = _rref([list(map(as_rational, v)) for v in vectors])
    return len(pivots)


def nullspace(rows: Sequence[Sequence]) -> list[Vector]:
    """Basis of {x : rows . x = 0}, one vector per free column."""
    ncols = len(rows[0])
    red, pivots = _rref([list(map(as_rational, r)) for r in rows])
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        x = [Fraction(0)] * ncols
        x[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            x[pc] = -red[i][fc]
        basis.append(tuple(x))
    return basis


def solve(rows: Sequence[Sequence], rhs: Sequence) -> Vector | None:
    """One solution of rows . x = rhs, or None when inconsistent."""
    ncols = len(rows[0])
    aug = [list(map(as_rational, r)) + [as_rational(b)] for r, b in zip(rows, rhs)]
    red, pivots = _rref(aug)
    if ncols in pivots:
        return None
    x = [Fraction(0)] * ncols
    for i, pc in enumerate(pivots):
        x[pc] = red[i][ncols]
    return tuple(x)


def coordinates(basis: Sequence[Vector], v: Sequence) -> Vector | None:
    """Coefficients of ``v`` in the span of ``basis`` (None if outside)."""
    n = len(v)
    rows = [[b[i] for b in basis] for i in range(n)]
    return solve(rows, v)


# -- matrices ---------------------------------------------------------------


class Matrix:
    """Immutable n x n rational matrix.

    Stored as a flat row-major tuple of integer numerators and one positive
    common denominator, reduced so that gcd(numerators, den) == 1.
    """

    __slots__ = ("n", "_num", "_den", "_hash", "_inv")

    def __init__(self, rows):
        rows = [[as_rational(x) for x in row] for row in rows]
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise InvalidInputError("matrix must be square")
        den = 1
        for r in rows:
            for x in r:
                den = den * x.denominator // math.gcd(den, x.denominator)
        num = [x.numerator * (den // x.denominator) for r in rows for x in r]
        self._set(n, num, den)

    def _set(self, n, num, den):
        g = math.gcd(den, *num) if num else den
        if g > 1:
            num = [a // g for a in num]
            den //= g
        self.n = n
        self._num = tuple(num)
        self._den = den
        self._hash = None
        self._inv = None

    @classmethod
    def _make(cls, n: int, num, den: int) -> "Matrix":
        m = cls.__new__(cls)
        m._set(n, num, den)
        return m

    # constructors
    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls._make(n, [int(i == j) for i in range(n) for j in range(n)], 1)

    @classmethod
    def zero(cls, n: int) -> "Matrix":
        return cls._make(n, [0] * (n * n), 1)

    @classmethod
    def diag(cls, values) -> "Matrix":
        values = [as_rational(v) for v in values]
        n = len(values)
        return cls([[values[i] if i == j else 0 for j in range(n)] for i in range(n)])

    @classmethod
    def scalar(cls, n: int, c) -> "Matrix":
        return cls.diag([c] * n)

    @classmethod
    def from_columns(cls, cols) -> "Matrix":
        cols = [vector(c) for c in cols]
        n = len(cols)
        return cls([[cols[j][i] for j in range(n)] for i in range(n)])

    # access
    @property
    def numerators(self) -> tuple:
        return self._num

    @property
    def denominator(self) -> int:
        return self._den

    def __getitem__(self, ij) -> Fraction:
        i, j = ij
        return Fraction(self._num[i * self.n + j], self._den)

    @property
    def rows(self) -> tuple:
        n, d = self.n, self._den
        return tuple(tuple(Fraction(self._num[i * n + j], d) for j in range(n)) for i in range(n))

    def row(self, i: int) -> Vector:
        return tuple(Fraction(x, self._den) for x in self._num[i * self.n:(i + 1) * self.n])

    def column(self, j: int) -> Vector:
        return tuple(Fraction(x, self._den) for x in self._num[j::self.n])

    def columns(self) -> list[Vector]:
        return [self.column(j) for j in range(self.n)]

    # arithmetic
    def __matmul__(self, other):
        n = self.n
        if isinstance(other, Matrix):
            if other.n != n:
                raise InvalidInputError("dimension mismatch")
            a, b = self._num, other._num
            bcols = [b[j::n] for j in range(n)]
            out = []
            mul = operator.mul
            for i in range(n):
                row = a[i * n:(i + 1) * n]
                for col in bcols:
                    out.append(sum(map(mul, row, col)))
            return Matrix._make(n, out, self._den * other._den)
        v = vector(other)
        if len(v) != n:
            raise InvalidInputError("dimension mismatch")
        return tuple(
            sum((Fraction(self._num[i * n + j], self._den) * v[j] for j in range(n)), Fraction(0))
            for i in range(n)
        )

    def apply(self, v) -> Vector:
        return self @ v

    def __add__(self, other: "Matrix") -> "Matrix":
        d = self._den * other._den
        return Matrix._make(
            self.n, [a * other._den + b * self._den for a, b in zip(self._num, other._num)], d
        )

    def __neg__(self) -> "Matrix":
        return Matrix._make(self.n, [-a for a in self._num], self._den)

    def __sub__(self, other: "Matrix") -> "Matrix":
        return self + (-other)

    def __mul__(self, c) -> "Matrix":
        if isinstance(c, Matrix):
            return self @ c
        c = as_rational(c)
        return Matrix._make(self.n, [a * c.numerator for a in self._num], self._den * c.denominator)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Matrix":
        if k < 0:
            return self.inverse() ** (-k)
        result = Matrix.identity(self.n)
        base = self
        while k:
            if k & 1:
                result = result @ base
            base = base @ base
            k >>= 1
        return result

    def transpose(self) -> "Matrix":
        n = self.n
        return Matrix._make(n, [self._num[j * n + i] for i in range(n) for j in range(n)], self._den)

    def det(self) -> Fraction:
        """Bareiss fraction-free elimination on the numerator matrix."""
        n = self.n
        a = [list(self._num[i * n:(i + 1) * n]) for i in range(n)]
        sign = 1
        prev = 1
        for k in range(n - 1):
            if a[k][k] == 0:
                swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
                if swap is None:
                    return Fraction(0)
                a[k], a[swap] = a[swap], a[k]
                sign = -sign
            for i in range(k + 1, n):
                for j in range(k + 1, n):
                    a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
            prev = a[k][k]
        return Fraction(sign * a[n - 1][n - 1], self._den ** n)

    def inverse(self) -> "Matrix":
        if self._inv is None:
            n = self.n
            aug = [list(r) + [Fraction(int(i == j)) for j in range(n)] for i, r in enumerate(self.rows)]
            red, pivots = _rref(aug)
            if pivots[:n] != list(range(n)):
                raise InvalidInputError("matrix is singular")
            inv = Matrix([r[n:] for r in red])
            inv._inv = self
            self._inv = inv
        return self._inv

    def is_identity(self) -> bool:
        return self._den == 1 and self._num == Matrix.identity(self.n)._num

    def scalar_value(self) -> Fraction | None:
        """The c with self == c*I, or None."""
        n = self.n
        d = self._num[0]
        for i in range(n):
            for j in range(n):
                x = self._num[i * n + j]
                if x != (d if i == j else 0):
                    return None
        return Fraction(d, self._den)

    def is_scalar(self) -> bool:
        return self.scalar_value() is not None

    def rank(self) -> int:
        return rank(self.rows)

    # identity
    def __eq__(self, other) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.n == other.n and self._den == other._den and self._num == other._num

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.n, self._den, self._num))
        return self._hash

    def __repr__(self) -> str:
        body = "; ".join(" ".join(rat_str(x) for x in r) for r in self.rows)
        return f"Matrix[{body}]"

    # JSON
    def to_json(self) -> dict:
        return {"n": self.n, "entries": [[rat_str(x) for x in r] for r in self.rows]}

    @classmethod
    def from_json(cls, obj) -> "Matrix":
        if isinstance(obj, dict):
            m = cls(obj["entries"])
            if m.n != obj.get("n", m.n):
                raise InvalidInputError("matrix JSON: n does not match entries")
            return m
        return cls(obj)


# -- projective objects -----------------------------------------------------


def _canonical(coords) -> Vector:
    v = vector(coords)
    lead = next((x for x in v if x != 0), None)
    if lead is None:
        raise InvalidInputError("zero vector has no projective class")
    return tuple(x / lead for x in v)


@dataclass(frozen=True)
class ProjectivePoint:
    coords: Vector

    def __init__(self, coords):
        object.__setattr__(self, "coords", _canonical(coords))

    @property
    def n(self) -> int:
        return len(self.coords)

    def image(self, m: Matrix) -> "ProjectivePoint":
        return ProjectivePoint(m @ self.coords)

    def to_json(self):
        return [rat_str(x) for x in self.coords]


@dataclass(frozen=True)
class ProjectiveHyperplane:
    """Hyperplane {x : <normal, x> = 0}."""

    normal: Vector

    def __init__(self, normal):
        object.__setattr__(self, "normal", _canonical(normal))

    def contains(self, x) -> bool:
        coords = x.coords if isinstance(x, ProjectivePoint) else vector(x)
        return dot(self.normal, coords) == 0

    __contains__ = contains

    @classmethod
    def spanned_by(cls, vectors: Sequence[Sequence]) -> "ProjectiveHyperplane":
        ns = nullspace([vector(v) for v in vectors])
        if len(ns) != 1:
            raise InvalidBasisError("vectors do not span a hyperplane")
        return cls(ns[0])

    def to_json(self):
        return [rat_str(x) for x in self.normal]


# -- involutions ------------------------------------------------------------


@dataclass(frozen=True)
class Involution:
    matrix: Matrix
    w_plus: tuple
    w_minus: tuple

    @classmethod
    def from_matrix(cls, t: Matrix) -> "Involution":
        n = t.n
        ident = Matrix.identity(n)
        if t @ t != ident:
            raise InvalidInvolutionError("t*t is not the identity")
        if t == ident:
            raise InvalidInvolutionError("t is the identity")
        if t.det() != 1:
            raise InvalidInvolutionError("det(t) != 1")
        w_plus = tuple(nullspace((t - ident).rows))
        w_minus = tuple(nullspace((t + ident).rows))
        return cls(t, w_plus, w_minus)

    @classmethod
    def standard(cls, n: int, r: int) -> "Involution":
        """diag(1,...,1,-1,...,-1) with r ones."""
        return cls.from_matrix(Matrix.diag([1] * r + [-1] * (n - r)))

    @property
    def n(self) -> int:
        return self.matrix.n

    @property
    def r(self) -> int:
        return len(self.w_plus)


def projector(t) -> Matrix:
    """(1 + t)/2: projection onto W+(t) along W-(t)."""
    if isinstance(t, Involution):
        m = t.matrix
    else:
        m = t
        ident = Matrix.identity(m.n)
        if m @ m != ident:
            raise InvalidInvolutionError("t*t is not the identity")
    return (Matrix.identity(m.n) + m) * Fraction(1, 2)


# -- projective metric and eigen-tests --------------------------------------


def wedge_norm_sq(v: Sequence, w: Sequence) -> Fraction:
    """|v ^ w|^2 for the Euclidean norm (Lagrange identity)."""
    return dot(v, v) * dot(w, w) - dot(v, w) ** 2


def proj_distance_sq(x: ProjectivePoint, y: ProjectivePoint) -> Fraction:
    v, w = x.coords, y.coords
    return wedge_norm_sq(v, w) / (dot(v, v) * dot(w, w))


def in_neighborhood(x: ProjectivePoint, pts, eps_sq) -> bool:
    pts = list(pts)
    if not pts:
        raise EmptySetError("neighbourhood of the empty set")
    eps_sq = as_rational(eps_sq)
    return min(proj_distance_sq(x, s) for s in pts) < eps_sq


def _parallel(u: Sequence, v: Sequence) -> bool:
    n = len(u)
    return all(u[i] * v[j] == u[j] * v[i] for i in range(n) for j in range(i + 1, n))


def is_eigenvector(m: Matrix, v) -> bool:
    """True iff m v ^ v = 0 (eigenvalue 0 included)."""
    v = vector(v)
    if is_zero_vector(v):
        raise InvalidInputError("zero vector")
    return _parallel(m @ v, v)


def eigenvalue_of(m: Matrix, v) -> Fraction | None:
    v = vector(v)
    mv = m @ v
    if not _parallel(mv, v):
        return None
    i = next(i for i, x in enumerate(v) if x != 0)
    return mv[i] / v[i]


def scalar_on_subspace(m: Matrix, basis) -> Fraction | None:
    """lambda with m w = lambda w for every w in the span of ``basis``."""
    basis = [vector(b) for b in basis]
    if rank(basis) != len(basis):
        raise InvalidBasisError("basis vectors are linearly dependent")
    lam = None
    for w in basis:
        mu = eigenvalue_of(m, w)
        if mu is None or (lam is not None and mu != lam):
            return None
        lam = mu
    return lam


def general_position(vectors) -> bool:
    vectors = [vector(v) for v in vectors]
    if not vectors:
        raise InvalidInputError("need r+1 vectors of length r")
    r = len(vectors[0])
    if len(vectors) != r + 1 or any(len(v) != r for v in vectors):
        raise InvalidInputError("need exactly r+1 vectors of length r")
    # independence of every r-subset implies it for all smaller subsets
    return all(
        Matrix.from_columns(sub).det() != 0 for sub in combinations(vectors, r)
    )


def scalar_from_eigenvectors(b: Matrix, vectors) -> Fraction | None:
    """If r+1 vectors in general position are all eigenvectors of ``b``,
    ``b`` is scalar; return that scalar. Otherwise None."""
    vectors = [vector(v) for v in vectors]
    if not general_position(vectors):
        raise InvalidInputError("vectors are not in general position")
    if len(vectors[0]) != b.n:
        raise InvalidInputError("dimension mismatch")
    lam = None
    for v in vectors:
        mu = eigenvalue_of(b, v)
        if mu is None:
            return None
        # two general-position eigenvectors with different eigenvalues would
        # already rule out a scalar
        if lam is not None and mu != lam:
            return None
        lam = mu
    return lam

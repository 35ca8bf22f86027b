"""Ping-pong data: the scaled proximal element and the basis choices.

A :class:`PingPongScheme` is a basis v1..vn together with a scale L > 1.
It determines the attracting points a+ = [v1], a- = [v2], the repelling
hyperplanes H+ = [span(v2..vn)], H- = [span(v1, v3..vn)], and the element
acting by L on v1, 1/L on v2 and trivially on the rest.

Bases are drawn by seeded rejection sampling of small-height rationals and
every required genericity condition is then checked exactly; the outcome
is recorded in a :class:`ConditionReport`.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .errors import InvalidSchemeError, PreconditionError, SearchFailure
from .exactlin import (
    Involution,
    Matrix,
    ProjectiveHyperplane,
    ProjectivePoint,
    as_rational,
    coordinates,
    is_eigenvector,
    is_zero_vector,
    nullspace,
    proj_distance_sq,
    projector,
    rank,
    rat_str,
    scalar_on_subspace,
)

DEFAULT_HEIGHT = 10


@dataclass(frozen=True)
class PingPongScheme:
    basis: Matrix  # columns are v1..vn
    L: Fraction = Fraction(2)

    def __post_init__(self):
        if self.basis.det() == 0:
            raise InvalidSchemeError("scheme basis is singular")
        object.__setattr__(self, "L", as_rational(self.L))
        if self.L <= 0:
            raise InvalidSchemeError("scale L must be positive")

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def vectors(self) -> list:
        return self.basis.columns()

    @property
    def a_plus(self) -> ProjectivePoint:
        return ProjectivePoint(self.basis.column(0))

    @property
    def a_minus(self) -> ProjectivePoint:
        return ProjectivePoint(self.basis.column(1))

    @property
    def h_plus(self) -> ProjectiveHyperplane:
        # the first dual-basis covector vanishes on v2..vn
        return ProjectiveHyperplane(self.basis.inverse().row(0))

    @property
    def h_minus(self) -> ProjectiveHyperplane:
        return ProjectiveHyperplane(self.basis.inverse().row(1))

    def with_L(self, L) -> "PingPongScheme":
        return replace(self, L=as_rational(L))

    def to_json(self) -> dict:
        return {"basis": self.basis.to_json(), "L": rat_str(self.L)}

    @classmethod
    def from_json(cls, obj) -> "PingPongScheme":
        return cls(Matrix.from_json(obj["basis"]), as_rational(obj["L"]))


@dataclass
class ConditionReport:
    results: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, witness=None) -> None:
        self.results[name] = bool(passed)
        if not passed:
            self.witnesses[name] = witness

    @property
    def ok(self) -> bool:
        return all(self.results.values())

    def failed(self) -> list:
        return [k for k, v in self.results.items() if not v]

    def to_json(self) -> dict:
        return {"results": dict(self.results), "witnesses": {k: _jsonable(v) for k, v in self.witnesses.items()}}

    @classmethod
    def from_json(cls, obj) -> "ConditionReport":
        return cls(dict(obj["results"]), dict(obj.get("witnesses", {})))


def _jsonable(x):
    if isinstance(x, (list, tuple)):
        return [_jsonable(y) for y in x]
    if isinstance(x, Fraction):
        return rat_str(x)
    if isinstance(x, Matrix):
        return x.to_json()
    return x


def _scaled(scheme: PingPongScheme) -> Matrix:
    c = scheme.basis
    d = Matrix.diag([scheme.L, 1 / scheme.L] + [1] * (scheme.n - 2))
    return c @ d @ c.inverse()


def build_scaled(scheme: PingPongScheme, allow_degenerate: bool = False) -> Matrix:
    if scheme.L <= 1 and not allow_degenerate:
        raise InvalidSchemeError("scale L must exceed 1")
    return _scaled(scheme)


def build_hnn_scaled(t: Involution, scheme: PingPongScheme, allow_degenerate: bool = False) -> Matrix:
    """u(L) in SL(W+) x SL(W-): v1..vr must span W+, the rest W-."""
    r = t.r
    tm = t.matrix
    for i, v in enumerate(scheme.vectors):
        want = v if i < r else tuple(-x for x in v)
        if tm @ v != want:
            raise InvalidSchemeError(f"basis vector {i + 1} is not in W{'+' if i < r else '-'}(t)")
    if r < 2:
        raise InvalidSchemeError("W+ must have dimension >= 2")
    return build_scaled(scheme, allow_degenerate)


def proximality_probe(scheme: PingPongScheme, x: ProjectivePoint, ls, inverse: bool = False) -> list:
    """d^2(f(L)^{+-1} x, a^{+-}) for each L in ``ls``."""
    hyper = scheme.h_minus if inverse else scheme.h_plus
    target = scheme.a_minus if inverse else scheme.a_plus
    if hyper.contains(x):
        raise PreconditionError("probe point lies on the repelling hyperplane", x.to_json())
    out = []
    for L in ls:
        f = _scaled(scheme.with_L(L))
        if inverse:
            f = f.inverse()
        out.append(proj_distance_sq(x.image(f), target))
    return out


# -- sampling -------------------------------------------------------------------


def _rand_rat(rng: random.Random, height: int) -> Fraction:
    return Fraction(rng.randint(-height, height), rng.randint(1, height))


def _rand_in_span(rng, basis: Sequence, height: int) -> tuple:
    n = len(basis[0])
    while True:
        coeffs = [_rand_rat(rng, height) for _ in basis]
        v = tuple(sum((c * b[i] for c, b in zip(coeffs, basis)), Fraction(0)) for i in range(n))
        if not is_zero_vector(v):
            return v


def _mat(x) -> Matrix:
    return x if isinstance(x, Matrix) else x.matrix


def image_basis(m: Matrix) -> list:
    """Basis of the column space of ``m``."""
    cols = m.columns()
    out = []
    for c in cols:
        if rank(out + [c]) > len(out):
            out.append(c)
    return out


# -- free-product conditions ------------------------------------------------


def check_free_conditions(scheme: PingPongScheme, x: ProjectivePoint, g_letters, h_letters,
                          pr: Matrix) -> ConditionReport:
    """The four ping-pong requirements, checked for every letter at once.

    (1) g(x) not in H- for g in G-letters and g = 1;
    (2) g(a+) not in H- for every G-letter;
    (3) h(a-) not in H+ for every H-letter;
    (4) Pr(a+) and Pr g(a+) are defined and differ from x.
    """
    gs = [_mat(g) for g in g_letters]
    hs = [_mat(h) for h in h_letters]
    rep = ConditionReport()
    v1, v2 = scheme.basis.column(0), scheme.basis.column(1)
    hp, hm = scheme.h_plus, scheme.h_minus
    rep.add("x_in_W", pr @ x.coords == x.coords, x.to_json())
    bad = [i for i, g in enumerate(gs) if is_eigenvector(g, v1)]
    rep.add("v1_not_eigen_G", not bad, bad)
    bad = [i for i, h in enumerate(hs) if is_eigenvector(h, v2)]
    rep.add("v2_not_eigen_H", not bad, bad)
    bad = [i for i, g in enumerate([Matrix.identity(scheme.n)] + gs) if hm.contains(g @ x.coords)]
    rep.add("cond1_gx_off_Hminus", not bad, [i - 1 for i in bad])
    bad = [i for i, g in enumerate(gs) if hm.contains(g @ v1)]
    rep.add("cond2_ga_plus_off_Hminus", not bad, bad)
    bad = [i for i, h in enumerate(hs) if hp.contains(h @ v2)]
    rep.add("cond3_ha_minus_off_Hplus", not bad, bad)
    bad = []
    for i, g in enumerate([Matrix.identity(scheme.n)] + gs):
        y = pr @ (g @ v1)
        if is_zero_vector(y) or ProjectivePoint(y) == x:
            bad.append(i - 1)
    rep.add("cond4_pr_a_plus_ne_x", not bad, bad)
    return rep


def choose_basis_free(g_letters, h_letters, pr: Matrix, seed: int, height: int = DEFAULT_HEIGHT,
                      retries: int = 50):
    """Draw (scheme, x) meeting the free-product ping-pong conditions.

    Returns ``(scheme, x, report)``; the scheme has L = 2 (the caller
    climbs the ladder).
    """
    gs = [_mat(g) for g in g_letters]
    hs = [_mat(h) for h in h_letters]
    n = pr.n
    for i, m in enumerate(gs + hs):
        if m.is_scalar():
            raise PreconditionError(f"letter {i} is a scalar matrix")
    w_basis = image_basis(pr)
    k_dim = len(nullspace(pr.rows))
    if len(w_basis) - k_dim < 2:
        raise PreconditionError("need dim Im(Pr) - dim ker(Pr) >= 2")
    rng = random.Random(seed)
    std = [tuple(Fraction(int(i == j)) for j in range(n)) for i in range(n)]
    report = None
    for _ in range(retries):
        vecs = [_rand_in_span(rng, std, height) for _ in range(n)]
        basis = Matrix.from_columns(vecs)
        if basis.det() == 0:
            continue
        scheme = PingPongScheme(basis, Fraction(2))
        x = ProjectivePoint(_rand_in_span(rng, w_basis, height))
        report = check_free_conditions(scheme, x, gs, hs, pr)
        if report.ok:
            return scheme, x, report
    raise SearchFailure("no admissible ping-pong basis found",
                        {"failed": report.failed() if report else ["singular draws"]})


# -- HNN conditions -------------------------------------------------------------


def check_hnn_conditions(scheme: PingPongScheme, t: Involution, s0) -> ConditionReport:
    gs = [_mat(g) for g in s0]
    pr = projector(t)
    r = t.r
    vecs = scheme.vectors
    v1, v2 = vecs[0], vecs[1]
    rep = ConditionReport()
    tm = t.matrix
    compatible = all(tm @ v == v for v in vecs[:r]) and all(
        tm @ v == tuple(-a for a in v) for v in vecs[r:]
    )
    rep.add("basis_compatible", compatible)
    prg = [pr @ g for g in gs]
    for name, v in (("v1_in_Omega", v1), ("v2_in_Omega", v2)):
        bad = [i for i, m in enumerate(prg) if is_eigenvector(m, v)]
        rep.add(name, not bad, bad)
    bad = [i for i, m in enumerate(prg) if rank([m @ v1, v2]) < 2]
    rep.add("v2_off_spans", not bad, bad)
    w_plus_basis = vecs[:r]
    bad = []
    for i, m in enumerate(prg):
        for j, v in enumerate((v1, v2)):
            c = coordinates(w_plus_basis, m @ v)
            if c is None or c[0] == 0 or c[1] == 0:
                bad.append([i, j])
    rep.add("hyperplanes_avoid", not bad, bad)
    cinv = scheme.basis.inverse()
    bad = []
    for i, g in enumerate(gs):
        for j, v in enumerate((v1, v2)):
            c = cinv @ (g @ v)
            if c[0] == 0 or c[1] == 0:
                bad.append([i, j])
    rep.add("prop_vi", not bad, bad)
    return rep


def check_aux_letters(s0, t: Involution) -> list:
    """Indices of letters g with Pr_t g scalar on W+ (the inherited condition)."""
    pr = projector(t)
    return [i for i, g in enumerate(s0) if scalar_on_subspace(pr @ _mat(g), t.w_plus) is not None]


def choose_basis_hnn(s0, t: Involution, seed: int, height: int = DEFAULT_HEIGHT, retries: int = 50):
    """Draw a scheme compatible with W+ + W- satisfying the Omega and
    hyperplane-avoidance conditions for the symmetric letter set ``s0``.

    Returns ``(scheme, report)`` with L = 2.
    """
    gs = [_mat(g) for g in s0]
    r, n = t.r, t.n
    if r < (n - r) + 2:
        raise PreconditionError("need dim W+ >= dim W- + 2")
    bad = check_aux_letters(gs, t)
    if bad:
        raise PreconditionError("W+ lies in an eigenspace of Pr_t g for some letter g", bad)
    rng = random.Random(seed)
    report = None
    for _ in range(retries):
        plus = [_rand_in_span(rng, t.w_plus, height) for _ in range(r)]
        minus = [_rand_in_span(rng, t.w_minus, height) for _ in range(n - r)]
        basis = Matrix.from_columns(plus + minus)
        if basis.det() == 0:
            continue
        scheme = PingPongScheme(basis, Fraction(2))
        report = check_hnn_conditions(scheme, t, gs)
        if report.ok:
            return scheme, report
    raise SearchFailure("no admissible HNN basis found",
                        {"failed": report.failed() if report else ["singular draws"]})

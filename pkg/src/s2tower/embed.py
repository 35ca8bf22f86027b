"""Certified matrix realizations of free products and HNN extensions.

Both constructions follow the same loop: draw a ping-pong basis, climb the
scale ladder L = 2, 4, ..., 2**l_max_exp, and for each candidate scan every
reduced word of the finite ball.  The first candidate with no violation is
issued as an :class:`EmbeddingCertificate`; otherwise the basis is
resampled, up to ``retry_cap`` times.

The scans evaluate words modulo a prime first.  A residue that is not
scalar (resp. not the identity) proves the exact matrix is not scalar
either; only words whose residues look degenerate are re-evaluated over Q.
``method="exact"`` disables the shortcut.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import ball as fp
from .ball import Ball
from .errors import (
    EmbeddingSearchFailure,
    InvalidInputError,
    MissingConjugatorError,
    PreconditionError,
    SearchFailure,
)
from .exactlin import Involution, Matrix, ProjectivePoint, projector, scalar_on_subspace
from .proximal import (
    ConditionReport,
    PingPongScheme,
    build_hnn_scaled,
    build_scaled,
    check_free_conditions,
    check_hnn_conditions,
    choose_basis_free,
    choose_basis_hnn,
    image_basis,
)
from .words import (
    FREE,
    HNN,
    Letter,
    iter_word_layers,
    letter_label,
    stable_letter,
    word_from_json,
    word_to_json,
)

FREE_KIND = "free"
HNN_KIND = "hnn"


def sub_seed(seed: int, *parts: int) -> int:
    """Deterministic child seed."""
    out = seed & 0xFFFFFFFFFFFFFFFF
    for p in parts:
        out = (out * 6364136223846793005 + 1442695040888963407 + p) & 0xFFFFFFFFFFFFFFFF
    return out


def letter_to_json(a: Letter) -> dict:
    return {
        "factor": a.factor,
        "label": word_to_json(a.label),
        "matrix": None if a.matrix is None else a.matrix.to_json(),
    }


def letter_from_json(obj) -> Letter:
    m = obj.get("matrix")
    return Letter(obj["factor"], word_from_json(obj["label"]), None if m is None else Matrix.from_json(m))


# -- ball scans -------------------------------------------------------------------


@dataclass
class ScanResult:
    checked: int = 0
    violations: list = field(default_factory=list)
    exact_fallbacks: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _scalar_on_basis_res(y: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """Mask of rows where y (k, n, r) == lambda * b (n, r) mod p for some lambda.

    Rows where b has no unit pivot are reported as suspicious.
    """
    nz = np.argwhere(b % p != 0)
    if len(nz) == 0:
        return np.ones(y.shape[0], dtype=bool)
    i0, j0 = nz[0]
    lam = (y[:, i0, j0] * pow(int(b[i0, j0]), -1, p)) % p
    return ((lam[:, None, None] * b[None] - y) % p == 0).all(axis=(1, 2))


def scan_ball(alphabet, images, radius: int, form: str, *, pr: Matrix, w_basis,
              skip, t: Matrix | None = None, stop_at_first: bool = False,
              method: str = "modp", check_scalar: bool = True) -> ScanResult:
    """Check every reduced word of length <= radius not excluded by ``skip``.

    ``images[j]`` is the exact matrix realizing ``alphabet[j]``.  A word is a
    violation when its image is scalar (``check_scalar``), the identity, or
    when ``pr`` times its image is scalar on span(w_basis).
    """
    n = pr.n
    out = ScanResult()
    w_cols = Matrix.from_columns(list(w_basis) + [(0,) * n] * (n - len(w_basis)))
    r = len(w_basis)

    def exact_violation(word) -> str | None:
        m = Matrix.identity(n)
        for j in word:
            m = m @ images[j]
        if m.is_identity():
            return "identity"
        if check_scalar and m.is_scalar():
            return "scalar"
        if scalar_on_subspace(pr @ m, w_basis) is not None:
            return "aux"
        return None

    def record(word, reason):
        out.violations.append({
            "word": word_to_json(letter_label(alphabet[j] for j in word)),
            "letters": list(word),
            "reason": reason,
        })

    if method == "exact":
        prev = [Matrix.identity(n)]
        for layer, parents in iter_word_layers(alphabet, radius, form, t):
            cur = [prev[0]] if len(layer[0]) == 0 else [prev[p] @ images[w[-1]] for w, p in zip(layer, parents)]
            for word, m in zip(layer, cur):
                if skip(word):
                    continue
                out.checked += 1
                reason = None
                if m.is_identity():
                    reason = "identity"
                elif check_scalar and m.is_scalar():
                    reason = "scalar"
                elif scalar_on_subspace(pr @ m, w_basis) is not None:
                    reason = "aux"
                if reason:
                    record(word, reason)
                    if stop_at_first:
                        return out
            prev = cur
        return out

    p = fp.choose_prime(list(images) + [pr, w_cols])
    img = fp.reduce_stack(list(images), p, n)
    pr_res = fp.reduce_matrix(pr, p)
    b_res = fp.reduce_matrix(w_cols, p)[:, :r]
    prev = fp.identity_res(n)[None]
    for layer, parents in iter_word_layers(alphabet, radius, form, t):
        if len(layer[0]) == 0:
            cur = prev
        else:
            par = np.asarray(parents)
            last = np.asarray([w[-1] for w in layer])
            cur = np.matmul(prev[par], img[last]) % p
        keep = np.array([not skip(w) for w in layer], dtype=bool)
        if keep.any():
            sub = cur[keep]
            idx = np.flatnonzero(keep)
            y = np.matmul(np.matmul(pr_res[None], sub) % p, b_res[None]) % p
            suspicious = _scalar_on_basis_res(y, b_res, p) | fp.is_identity_res(sub)
            if check_scalar:
                suspicious |= fp.is_scalar_res(sub)
            out.checked += int(keep.sum())
            for pos in np.flatnonzero(suspicious):
                word = layer[idx[pos]]
                out.exact_fallbacks += 1
                reason = exact_violation(word)
                if reason:
                    record(word, reason)
                    if stop_at_first:
                        return out
        prev = cur
    return out


# -- certificates ----------------------------------------------------------------


@dataclass
class EmbeddingCertificate:
    kind: str
    scheme: PingPongScheme
    ell: Matrix
    radius: int
    exponent_cap: int
    checked_words: int
    aux: bool
    seed: int
    report: ConditionReport
    g_letters: list
    h_letters: list = field(default_factory=list)
    projector: Matrix | None = None
    x: ProjectivePoint | None = None
    t: Matrix | None = None
    v: Matrix | None = None
    h: Matrix | None = None
    h_word: tuple = ()
    conj_radius: int | None = None
    precheck_radius: int | None = None
    power_bound: int = 0
    violations: list = field(default_factory=list)
    method: str = "modp"
    attempt: int = 0
    timestamp: str | None = None
    config_hash: str | None = None

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "scheme": self.scheme.to_json(),
            "ell": self.ell.to_json(),
            "radius": self.radius,
            "exponentCap": self.exponent_cap,
            "checkedWords": self.checked_words,
            "aux": self.aux,
            "seed": self.seed,
            "attempt": self.attempt,
            "conditionReport": self.report.to_json(),
            "gLetters": [letter_to_json(a) for a in self.g_letters],
            "hLetters": [letter_to_json(a) for a in self.h_letters],
            "involutionConjugacyRadius": self.conj_radius,
            "precheckRadius": self.precheck_radius,
            "powerBound": self.power_bound,
            "violations": list(self.violations),
            "method": self.method,
            "timestamp": self.timestamp,
            "configHash": self.config_hash,
        }
        for key in ("projector", "t", "v", "h"):
            m = getattr(self, key)
            out[key] = None if m is None else m.to_json()
        out["x"] = None if self.x is None else self.x.to_json()
        out["hWord"] = word_to_json(self.h_word)
        return out

    @classmethod
    def from_json(cls, obj) -> "EmbeddingCertificate":
        def mat(key):
            m = obj.get(key)
            return None if m is None else Matrix.from_json(m)

        return cls(
            kind=obj["kind"],
            scheme=PingPongScheme.from_json(obj["scheme"]),
            ell=Matrix.from_json(obj["ell"]),
            radius=int(obj["radius"]),
            exponent_cap=int(obj["exponentCap"]),
            checked_words=int(obj["checkedWords"]),
            aux=bool(obj["aux"]),
            seed=int(obj["seed"]),
            attempt=int(obj.get("attempt", 0)),
            report=ConditionReport.from_json(obj["conditionReport"]),
            g_letters=[letter_from_json(a) for a in obj["gLetters"]],
            h_letters=[letter_from_json(a) for a in obj.get("hLetters", [])],
            projector=mat("projector"),
            x=None if obj.get("x") is None else ProjectivePoint(obj["x"]),
            t=mat("t"),
            v=mat("v"),
            h=mat("h"),
            h_word=word_from_json(obj.get("hWord", [])),
            conj_radius=obj.get("involutionConjugacyRadius"),
            precheck_radius=obj.get("precheckRadius"),
            power_bound=int(obj.get("powerBound", 0)),
            violations=list(obj.get("violations", [])),
            method=obj.get("method", "modp"),
            timestamp=obj.get("timestamp"),
            config_hash=obj.get("configHash"),
        )


def _timestamp() -> str | None:
    # wall-clock time would break byte-reproducibility; honour SOURCE_DATE_EPOCH only
    return os.environ.get("SOURCE_DATE_EPOCH")


def _first_power_identity(m: Matrix, bound: int) -> int | None:
    p = Matrix.identity(m.n)
    for j in range(1, bound + 1):
        p = p @ m
        if p.is_identity():
            return j
    return None


# -- free products -------------------------------------------------------------


def _check_factor_scalars(letters, radius: int, n: int, what: str) -> None:
    """No nontrivial scalar among the factor's ball elements up to ``radius``."""
    if not letters:
        return
    b = Ball([(a.label, a.matrix) for a in letters], radius, n)
    for i in np.flatnonzero(fp.is_scalar_res(b.res)):
        m = b.exact(int(i))
        if m.is_scalar() and not m.is_identity():
            raise PreconditionError(f"{what} contains a nontrivial scalar matrix",
                                    word_to_json(b.label(int(i))))


def free_images(g_letters, h_letters, f: Matrix) -> list:
    finv = f.inverse()
    return [a.matrix for a in g_letters] + [f @ a.matrix @ finv for a in h_letters]


def _free_scan(g_letters, h_letters, f, pr, radius, stop_at_first, method):
    alphabet = list(g_letters) + list(h_letters)
    ng = len(g_letters)
    images = free_images(g_letters, h_letters, f)
    return scan_ball(alphabet, images, radius, FREE, pr=pr, w_basis=image_basis(pr),
                     skip=lambda w: all(j < ng for j in w), stop_at_first=stop_at_first,
                     method=method)


def embed_free_product(g_letters, h_letters, pr: Matrix, radius: int, l_max_exp: int = 10,
                       seed: int = 0, retry_cap: int = 5, height: int = 10,
                       exponent_cap: int = 1, method: str = "modp",
                       precheck_radius: int | None = None):
    """Find f with Phi_f (g -> g, h -> f h f^-1) injective on the radius ball.

    ``g_letters`` / ``h_letters`` are the alphabets of the two factors
    (letters of factor "G" and "H").  Certified: every reduced word with at
    least one H-letter has a non-scalar image, and Pr of the image is not
    scalar on im(Pr).  The factors are checked for nontrivial scalars up
    to ``precheck_radius`` (default ``radius``).  Returns ``(f, certificate)``.
    """
    g_letters = [Letter("G", a.label, a.matrix) for a in g_letters]
    h_letters = [Letter("H", a.label, a.matrix) for a in h_letters]
    n = pr.n
    if n < 3:
        raise PreconditionError("need n >= 3")
    pre = radius if precheck_radius is None else precheck_radius
    _check_factor_scalars(g_letters, pre, n, "G")
    _check_factor_scalars(h_letters, pre, n, "H")
    first_violation = None
    for attempt in range(retry_cap):
        s = sub_seed(seed, attempt)
        try:
            scheme, x, report = choose_basis_free(g_letters, h_letters, pr, s, height)
        except SearchFailure as exc:
            first_violation = first_violation or {"basis": exc.diagnostics}
            continue
        for e in range(1, l_max_exp + 1):
            sch = scheme.with_L(2 ** e)
            f = build_scaled(sch)
            res = _free_scan(g_letters, h_letters, f, pr, radius, True, method)
            if res.ok:
                full = _free_scan(g_letters, h_letters, f, pr, radius, False, method)
                return f, EmbeddingCertificate(
                    kind=FREE_KIND, scheme=sch, ell=f, radius=radius, exponent_cap=exponent_cap,
                    checked_words=full.checked, aux=full.ok, seed=seed, attempt=attempt,
                    report=report, g_letters=g_letters, h_letters=h_letters, projector=pr, x=x,
                    violations=full.violations, method=method, timestamp=_timestamp(),
                    precheck_radius=pre,
                )
            if first_violation is None:
                first_violation = {"L": 2 ** e, "attempt": attempt, **res.violations[0]}
    raise EmbeddingSearchFailure("scale ladder and basis retries exhausted",
                                 {"first_violation": first_violation})


# -- HNN extensions ---------------------------------------------------------------


def find_conjugator(t: Matrix, v: Matrix, candidates: Ball) -> int | None:
    """Index of the first ball element h with h^-1 t h = v."""
    p = candidates.p
    t_res, v_res = fp.reduce_matrix(t, p), fp.reduce_matrix(v, p)
    lhs = np.matmul(t_res[None], candidates.res) % p
    rhs = np.matmul(candidates.res, v_res[None]) % p
    for i in np.flatnonzero((lhs == rhs).all(axis=(1, 2))):
        h = candidates.exact(int(i))
        if t @ h == h @ v:
            return int(i)
    return None


def hnn_alphabet(g_letters, t: Matrix) -> list:
    return [Letter("G", a.label, a.matrix) for a in g_letters] + [stable_letter(1), stable_letter(-1)]


def _hnn_scan(g_letters, t: Involution, u: Matrix, radius, stop_at_first, method):
    alphabet = hnn_alphabet(g_letters, t.matrix)
    images = [a.matrix for a in g_letters] + [u, u.inverse()]
    t_idx = {j for j, a in enumerate(g_letters) if a.matrix == t.matrix}

    def skip(w):
        return len(w) == 0 or (len(w) == 1 and w[0] in t_idx)

    return scan_ball(alphabet, images, radius, HNN, pr=projector(t), w_basis=t.w_plus,
                     skip=skip, t=t.matrix, stop_at_first=stop_at_first, method=method,
                     check_scalar=False)


def embed_k_form(g_letters, t: Involution, radius: int, l_max_exp: int = 10, seed: int = 0,
                 retry_cap: int = 5, height: int = 10, method: str = "modp"):
    """Realize <G, k | k^-1 t k = t> with k -> u(L) centralizing t.

    Returns ``(u, scheme, report, scan, attempt)``.
    """
    s0 = [a for a in g_letters if not (a.matrix == t.matrix or a.matrix.is_identity())]
    first_violation = None
    for attempt in range(retry_cap):
        try:
            scheme, report = choose_basis_hnn(s0, t, sub_seed(seed, attempt), height)
        except SearchFailure as exc:
            first_violation = first_violation or {"basis": exc.diagnostics}
            continue
        for e in range(1, l_max_exp + 1):
            sch = scheme.with_L(2 ** e)
            u = build_hnn_scaled(t, sch)
            res = _hnn_scan(g_letters, t, u, radius, True, method)
            if res.ok:
                full = _hnn_scan(g_letters, t, u, radius, False, method)
                return u, sch, report, full, attempt
            if first_violation is None:
                first_violation = {"L": 2 ** e, "attempt": attempt, **res.violations[0]}
    raise EmbeddingSearchFailure("scale ladder and basis retries exhausted",
                                 {"first_violation": first_violation})


def embed_hnn(g_letters, t: Involution, v: Matrix, radius: int, conj_ball: Ball,
              l_max_exp: int = 10, seed: int = 0, retry_cap: int = 5, height: int = 10,
              exponent_cap: int = 1, method: str = "modp"):
    """Find ell with ell^-1 t ell = v realizing <G, f | f^-1 t f = v>.

    The conjugator h (h^-1 t h = v) is looked up in ``conj_ball``; the
    stable letter k = f h^-1 is realized by u(L) and ell = u h.
    Returns ``(ell, certificate)``.
    """
    n = t.n
    ident = Matrix.identity(n)
    if v @ v != ident or v == ident:
        raise PreconditionError("v is not an involution")
    if v == t.matrix:
        raise PreconditionError("v equals t; use the k-form directly")
    hi = find_conjugator(t.matrix, v, conj_ball)
    if hi is None:
        raise MissingConjugatorError(
            f"no h with h^-1 t h = v within radius {conj_ball.radius}",
            {"radius": conj_ball.radius},
        )
    h = conj_ball.exact(hi)
    g_letters = [Letter("G", a.label, a.matrix) for a in g_letters]
    u, scheme, report, scan, attempt = embed_k_form(
        g_letters, t, radius, l_max_exp, seed, retry_cap, height, method)
    ell = u @ h
    assert ell.inverse() @ t.matrix @ ell == v
    bound = 2 * radius
    if _first_power_identity(ell, bound) is not None:
        raise EmbeddingSearchFailure("ell has finite order within the checked bound")
    return ell, EmbeddingCertificate(
        kind=HNN_KIND, scheme=scheme, ell=ell, radius=radius, exponent_cap=exponent_cap,
        checked_words=scan.checked, aux=scan.ok, seed=seed, attempt=attempt, report=report,
        g_letters=g_letters, t=t.matrix, v=v, h=h, h_word=conj_ball.label(hi),
        conj_radius=conj_ball.radius, power_bound=bound, violations=scan.violations,
        method=method, timestamp=_timestamp(),
    )


# -- replay ---------------------------------------------------------------------------


def replay_certificate(cert: EmbeddingCertificate, method: str | None = None) -> ConditionReport:
    """Re-run every recorded check from the certificate data alone."""
    method = method or cert.method
    rep = ConditionReport()
    if cert.kind == FREE_KIND:
        pr = cert.projector
        f = build_scaled(cert.scheme)
        rep.add("ell_matches_scheme", f == cert.ell)
        cond = check_free_conditions(cert.scheme, cert.x, cert.g_letters, cert.h_letters, pr)
        rep.add("basis_conditions", cond.ok, cond.failed())
        scan = _free_scan(cert.g_letters, cert.h_letters, f, pr, cert.radius, False, method)
    elif cert.kind == HNN_KIND:
        t = Involution.from_matrix(cert.t)
        u = build_hnn_scaled(t, cert.scheme)
        rep.add("ell_matches_scheme", u @ cert.h == cert.ell)
        rep.add("relation", cert.ell.inverse() @ cert.t @ cert.ell == cert.v)
        rep.add("conjugator", cert.h.inverse() @ cert.t @ cert.h == cert.v)
        s0 = [a for a in cert.g_letters if not (a.matrix == cert.t or a.matrix.is_identity())]
        cond = check_hnn_conditions(cert.scheme, t, s0)
        rep.add("basis_conditions", cond.ok, cond.failed())
        rep.add("infinite_order_bound", _first_power_identity(cert.ell, cert.power_bound) is None)
        scan = _hnn_scan(cert.g_letters, t, u, cert.radius, False, method)
    else:
        raise InvalidInputError(f"unknown certificate kind {cert.kind!r}")
    rep.add("ball_scan", scan.ok, scan.violations[:5])
    rep.add("checked_words_agree", scan.checked == cert.checked_words,
            [scan.checked, cert.checked_words])
    rep.add("aux_flag_agrees", scan.ok == cert.aux)
    return rep


# -- post-hoc checks over a group ball -------------------------------------------------


def verify_aux_condition(b: Ball, t: Involution) -> ConditionReport:
    """For every ball element outside {1, t}: W+ is not inside an eigenspace
    of Pr_t g."""
    pr = projector(t)
    p = b.p
    n = t.n
    w_cols = Matrix.from_columns(list(t.w_plus) + [(0,) * n] * (n - t.r))
    pr_res = fp.reduce_matrix(pr, p)
    b_res = fp.reduce_matrix(w_cols, p)[:, : t.r]
    y = np.matmul(np.matmul(pr_res[None], b.res) % p, b_res[None]) % p
    bad = []
    for i in np.flatnonzero(_scalar_on_basis_res(y, b_res, p)):
        m = b.exact(int(i))
        if m.is_identity() or m == t.matrix:
            continue
        if scalar_on_subspace(pr @ m, t.w_plus) is not None:
            bad.append(word_to_json(b.label(int(i))))
    rep = ConditionReport()
    rep.add("aux", not bad, bad)
    return rep


def involutions_in(b: Ball) -> list:
    """Indices of exact involutions in the ball."""
    p = b.p
    sq = np.matmul(b.res, b.res) % p
    cand = np.flatnonzero(fp.is_identity_res(sq) & ~fp.is_identity_res(b.res))
    out = []
    for i in cand:
        m = b.exact(int(i))
        if not m.is_identity() and (m @ m).is_identity():
            out.append(int(i))
    return out


def check_involutions_conjugate_ball(b: Ball, t: Matrix, conj: Ball) -> ConditionReport:
    """Every involution w of ``b`` has some c in ``conj`` with c^-1 w c = t."""
    p = conj.p
    t_res = fp.reduce_matrix(t, p)
    ct = np.matmul(conj.res, t_res[None]) % p
    bad = []
    found = []
    for i in involutions_in(b):
        w = b.exact(i)
        wc = np.matmul(fp.reduce_matrix(w, p)[None], conj.res) % p
        ok = None
        for j in np.flatnonzero((wc == ct).all(axis=(1, 2))):
            c = conj.exact(int(j))
            if w @ c == c @ t:
                ok = int(j)
                break
        if ok is None:
            bad.append(word_to_json(b.label(i)))
        else:
            found.append([word_to_json(b.label(i)), word_to_json(conj.label(ok))])
    rep = ConditionReport()
    rep.add("involutions_conjugate", not bad, bad)
    rep.witnesses["conjugators"] = found
    return rep

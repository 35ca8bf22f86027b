"""Finite stages of the extension tower.

A :class:`TowerState` holds the current group G (a generator table whose
first entries never change), the subgroup A (generator words over the
table), the involution t and the ledger of pairs (v, f) with f in A and
A t f = A v.  :func:`run_tower` walks candidates v in length-lex order,
classifies each one and applies the free or the HNN extension step.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np

from . import ball as fp
from .ball import Ball, ProductIndex
from .embed import (
    EmbeddingCertificate,
    check_involutions_conjugate_ball,
    embed_free_product,
    embed_hnn,
    involutions_in,
    sub_seed,
    verify_aux_condition,
)
from .errors import InvalidInputError, PreconditionError, SearchFailure
from .exactlin import Involution, Matrix, projector
from .verify import check_malnormal
from .words import GeneratorTable, Letter, factor_alphabet, word_from_json, word_str, word_to_json

T_NAME = "t"
_ADJOINED = re.compile(r"f\d+")
HELPER_NAME = "h0"

FOUND = "FoundWitness"
NOT_FOUND = "NoWitnessWithin"

ALREADY = "AlreadyWitnessed"
FREE_CASE = "FreeCase"
HNN_CASE = "HnnCase"
NEEDS_REDUCTION = "NeedsReduction"

DEFAULT_PARAMS = {
    "certRadius": 4,
    "enumRadius": 2,
    "memberRadius": 4,
    "conjRadius": 4,
    "exponentCap": 3,
    "LmaxExp": 10,
    "retryCap": 5,
    "heightBound": 10,
    "precheckRadius": 2,
}


def jordan_block(n: int) -> Matrix:
    """Unipotent n x n Jordan block; infinite order since (J - 1)^n = 0, J != 1."""
    return Matrix([[1 if j in (i, i + 1) else 0 for j in range(n)] for i in range(n)])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def gen_letters(table: GeneratorTable, words) -> list:
    """Ball letters for the subgroup generated by ``words``: each word and
    (unless it is an involution) its inverse."""
    out = []
    for w in words:
        m = table.evaluate(w)
        if m.is_identity():
            continue
        out.append((tuple(w), m))
        if not (m @ m).is_identity():
            out.append((table.inverse(w), m.inverse()))
    return out


@dataclass
class MembershipAnswer:
    status: str
    word: tuple | None = None
    radius: int = 0

    @property
    def found(self) -> bool:
        return self.status == FOUND

    def to_json(self) -> dict:
        return {"status": self.status, "radius": self.radius,
                "word": None if self.word is None else word_to_json(self.word)}


def member(g: Matrix, table: GeneratorTable, gens, radius: int,
           index: ProductIndex | None = None) -> MembershipAnswer:
    """Search the radius-ball of <gens> for ``g`` (exact confirmation)."""
    if g.is_identity():
        return MembershipAnswer(FOUND, (), radius)
    if index is None:
        letters = gen_letters(table, gens)
        if not letters:
            return MembershipAnswer(NOT_FOUND, None, radius)
        p = fp.choose_prime([m for _, m in letters] + [g])
        index = ProductIndex(letters, radius, table.n, p)
    pair = index.find(g)
    if pair is None:
        return MembershipAnswer(NOT_FOUND, None, radius)
    return MembershipAnswer(FOUND, table.reduce(index.label(pair)), radius)


@dataclass
class Classification:
    case: str
    f: tuple | None = None
    witness: tuple | None = None
    reason: str = ""

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "f": None if self.f is None else word_to_json(self.f),
            "witness": None if self.witness is None else word_to_json(self.witness),
            "reason": self.reason,
        }


@dataclass
class TowerState:
    n: int
    r: int
    table: GeneratorTable
    agens: list
    t: Involution
    h_names: list
    a_orig: list
    seed: int
    params: dict
    ledger: list = field(default_factory=list)
    history: list = field(default_factory=list)
    certs: dict = field(default_factory=dict)
    processed: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    cursor: dict = field(default_factory=lambda: {"block": 0, "blockSize": 0, "index": 1})
    stages_done: int = 0
    config_hash: str | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- derived data --------------------------------------------------------

    @property
    def adjoined(self) -> list:
        return [g for g in self.table.names if self.table.factors[g] in ("free", "hnn")]

    def next_name(self) -> str:
        return f"f{len(self.adjoined) + 1}"

    def g_letters(self, cap: int = 1, names=None) -> list:
        return self.table.ball_letters(names, cap)

    def a_letters(self) -> list:
        return gen_letters(self.table, self.agens)

    def a_index(self, radius: int) -> ProductIndex:
        key = ("A", tuple(self.agens), radius)
        if key not in self._cache:
            letters = self.a_letters()
            mats = [m for _, m in letters] + [self.table.matrices[g] for g in self.table.names]
            self._cache[key] = ProductIndex(letters, radius, self.n, fp.choose_prime(mats))
        return self._cache[key]

    def evaluate(self, w) -> Matrix:
        return self.table.evaluate(w)

    def copy(self) -> "TowerState":
        return TowerState.from_json(self.to_json())

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "r": self.r,
            "table": self.table.to_json(),
            "Agens": [word_to_json(w) for w in self.agens],
            "t": self.t.matrix.to_json(),
            "HNames": list(self.h_names),
            "AOriginal": [word_to_json(w) for w in self.a_orig],
            "seed": self.seed,
            "params": dict(self.params),
            "ledger": list(self.ledger),
            "history": list(self.history),
            "certs": dict(self.certs),
            "processed": list(self.processed),
            "skipped": list(self.skipped),
            "cursor": dict(self.cursor),
            "stagesDone": self.stages_done,
            "configHash": self.config_hash,
        }

    @classmethod
    def from_json(cls, obj) -> "TowerState":
        try:
            return cls(
                n=int(obj["n"]),
                r=int(obj["r"]),
                table=GeneratorTable.from_json(obj["table"]),
                agens=[word_from_json(w) for w in obj["Agens"]],
                t=Involution.from_matrix(Matrix.from_json(obj["t"])),
                h_names=list(obj["HNames"]),
                a_orig=[word_from_json(w) for w in obj["AOriginal"]],
                seed=int(obj["seed"]),
                params={**DEFAULT_PARAMS, **obj.get("params", {})},
                ledger=list(obj.get("ledger", [])),
                history=list(obj.get("history", [])),
                certs=dict(obj.get("certs", {})),
                processed=list(obj.get("processed", [])),
                skipped=list(obj.get("skipped", [])),
                cursor=dict(obj.get("cursor", {"block": 0, "blockSize": 0, "index": 1})),
                stages_done=int(obj.get("stagesDone", 0)),
                config_hash=obj.get("configHash"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed state: {exc}") from None

    def dumps(self) -> str:
        return canonical_json(self.to_json())


# -- bootstrap -----------------------------------------------------------------------


def check_dimensions(n: int, r: int) -> None:
    if not 0 < r <= n:
        raise InvalidInputError(f"r = {r} must satisfy 0 < r <= n = {n}")
    if (n - r) % 2:
        raise InvalidInputError(
            f"n - r = {n - r} is odd: t would have determinant -1, need n - r even")
    if r < (n - r) + 2:
        raise InvalidInputError(f"need r >= (n - r) + 2, got r = {r}, n - r = {n - r}")


def check_h_hypotheses(htab: GeneratorTable, radius: int) -> None:
    """H-ball free of involutions and nontrivial scalars; raises with the word."""
    b = Ball(htab.ball_letters(cap=1), radius, htab.n)
    for i in involutions_in(b):
        raise PreconditionError("H contains an involution", word_to_json(htab.reduce(b.label(i))))
    for i in np.flatnonzero(fp.is_scalar_res(b.res)):
        m = b.exact(int(i))
        if m.is_scalar() and not m.is_identity():
            raise PreconditionError("H contains a nontrivial scalar matrix",
                                    word_to_json(htab.reduce(b.label(int(i)))))


def resolve_a_generators(htab: GeneratorTable, a_spec, radius: int) -> list:
    """A-generators as words over H; matrices are located in the H-ball."""
    words = []
    index = None
    for item in a_spec:
        if isinstance(item, Matrix):
            if item.det() != 1:
                raise InvalidInputError("A-generator does not have determinant 1")
            if item != Matrix.identity(item.n) and (item @ item).is_identity():
                raise PreconditionError("A contains an involution", item.to_json())
            if index is None:
                letters = htab.ball_letters(cap=1)
                index = ProductIndex(letters, radius, htab.n,
                                     fp.choose_prime([m for _, m in letters] + [item]))
            pair = index.find(item)
            if pair is None:
                raise PreconditionError(f"A-generator not found in the H-ball of radius {radius}",
                                        item.to_json())
            words.append(htab.reduce(index.label(pair)))
        else:
            w = htab.reduce(item)
            for g, _ in w:
                if g not in htab:
                    raise InvalidInputError(f"A-generator uses unknown generator {g!r}")
            words.append(w)
    return [w for w in words if w]


def bootstrap(h_gens, a_gens, r: int, radius: int = 4, seed: int = 0,
              params: dict | None = None, chash: str | None = None) -> TowerState:
    """Realize G = <H, t> = H * Z/2 with t = diag(1^r, (-1)^(n-r)).

    ``h_gens`` is a list of ``(name, matrix)``; ``a_gens`` lists A-generators
    as words over H or as matrices.
    """
    params = {**DEFAULT_PARAMS, **(params or {})}
    params["certRadius"] = radius
    if not h_gens:
        raise InvalidInputError("H needs at least one generator")
    htab = GeneratorTable()
    for name, m in h_gens:
        if name in (T_NAME, HELPER_NAME) or _ADJOINED.fullmatch(name):
            raise InvalidInputError(f"generator name {name!r} is reserved")
        htab.add(name, m, "H")
    n = htab.n
    check_dimensions(n, r)
    check_h_hypotheses(htab, radius)
    a_words = resolve_a_generators(htab, a_gens, radius)
    a_letters = gen_letters(htab, a_words)
    rep = check_malnormal(htab.ball_letters(cap=1), a_letters, radius, radius, n)
    if not rep.passed:
        raise PreconditionError("A is not malnormal in H", rep.witnesses)
    t = Involution.standard(n, r)
    cap = params["exponentCap"]
    g_letters = [Letter("G", ((T_NAME, 1),), t.matrix)]
    h_letters = factor_alphabet(htab, htab.names, cap, "H")
    f, cert = embed_free_product(
        g_letters, h_letters, projector(t), radius, params["LmaxExp"], sub_seed(seed, 0),
        params["retryCap"], params["heightBound"], exponent_cap=cap)
    cert.config_hash = chash
    finv = f.inverse()
    table = GeneratorTable()
    table.add(T_NAME, t.matrix, "t")
    for name in htab.names:
        table.add(name, f @ htab.matrices[name] @ finv, "H")
    state = TowerState(n=n, r=r, table=table, agens=list(a_words), t=t, h_names=list(htab.names),
                       a_orig=list(a_words), seed=seed, params=params, config_hash=chash)
    state.certs["bootstrap"] = cert.to_json()
    state.history.append({
        "stage": 0, "case": "bootstrap", "cert": "bootstrap", "L": str(cert.scheme.L),
        "checks": bootstrap_checks(state),
    })
    state.cursor = {"block": 0, "blockSize": len(table.names), "index": 1}
    return state


def bootstrap_checks(state: TowerState) -> dict:
    """Malnormality, involution conjugacy and the auxiliary condition at the
    certificate radius."""
    rad = state.params["certRadius"]
    cap = state.params["exponentCap"]
    out = {}
    mal = check_malnormal(state.g_letters(1), state.a_letters(), rad, rad, state.n)
    out["malnormal"] = mal.passed
    gb = Ball(state.g_letters(cap), rad, state.n)
    conj = Ball(state.g_letters(1), state.params["conjRadius"], state.n, gb.p)
    out["involutionsConjugate"] = check_involutions_conjugate_ball(gb, state.t.matrix, conj).ok
    out["aux"] = verify_aux_condition(gb, state.t).ok
    return out


# -- classification ------------------------------------------------------------------


def _search(index: ProductIndex, left: Matrix, right: Matrix, left_res, right_res):
    """First f in the half A-ball with left f right in the A-ball."""
    half = index.half
    keys = index.probe.keys(half.res, left=left_res, right=right_res)
    for h in np.flatnonzero(index.print_hits(keys)):
        m = left @ half.exact(int(h)) @ right
        pair = index.confirm(m, index.lookup_prints(keys[h:h + 1])[0])
        if pair is not None:
            return int(h), pair
    return None


def classify(v_word, state: TowerState, radius: int | None = None) -> Classification:
    """Route a candidate v by bounded searches for f, a1, a2 in the A-ball."""
    radius = state.params["memberRadius"] if radius is None else radius
    index = state.a_index(radius)
    p = index.p
    v = state.evaluate(v_word)
    vi = v.inverse()
    t = state.t.matrix
    t_res, v_res, vi_res = (fp.reduce_matrix(m, p) for m in (t, v, vi))
    hit = _search(index, t, vi, t_res, vi_res)
    if hit is not None:
        h, pair = hit
        return Classification(ALREADY, state.table.reduce(index.half.label(h)),
                              state.table.reduce(index.label(pair)), "t f v^-1 in A")
    in_a = member(v, state.table, state.agens, radius, index)
    if in_a.found:
        return Classification(NEEDS_REDUCTION, reason="v in A")
    if _search(index, t, v, t_res, v_res) is not None:
        return Classification(NEEDS_REDUCTION, reason="v^-1 in AtA")
    if (v @ v).is_identity():
        return Classification(HNN_CASE, reason="involution outside AtA")
    if _search(index, v, v, v_res, v_res) is not None:
        return Classification(NEEDS_REDUCTION, reason="v^-1 in AvA")
    return Classification(FREE_CASE, reason="v, v^-1 outside AtA and v^-1 outside AvA")


# -- extension steps --------------------------------------------------------------------


def _stage_seed(state: TowerState) -> int:
    return sub_seed(state.seed, state.stages_done + 1)


def _record_step(state: TowerState, case: str, v_word, name: str, cert: EmbeddingCertificate,
                 witness_agen: int) -> None:
    cert.config_hash = state.config_hash
    state.certs[name] = cert.to_json()
    state.ledger.append({
        "v": word_to_json(v_word), "f": word_to_json(((name, 1),)), "case": case,
        "witness": {"agen": witness_agen, "word": word_to_json(state.agens[witness_agen])},
    })
    state.stages_done += 1
    state.history.append({"stage": state.stages_done, "case": case, "v": word_to_json(v_word),
                          "letter": name, "cert": name, "L": str(cert.scheme.L)})


def step_free(state: TowerState, v_word, seed: int | None = None) -> TowerState:
    """G1 = G * <f>, A1 = <A, f, t f v^-1>; returns a new state."""
    seed = _stage_seed(state) if seed is None else seed
    pm = state.params
    cap, n = pm["exponentCap"], state.n
    g_letters = factor_alphabet(state.table, state.table.names, cap)
    h0 = jordan_block(n)
    h_letters = []
    for e in range(1, cap + 1):
        h_letters.append(Letter("H", ((HELPER_NAME, e),), h0 ** e))
        h_letters.append(Letter("H", ((HELPER_NAME, -e),), h0 ** -e))
    f, cert = embed_free_product(
        g_letters, h_letters, projector(state.t), pm["certRadius"], pm["LmaxExp"], seed,
        pm["retryCap"], pm["heightBound"], exponent_cap=cap, precheck_radius=pm["precheckRadius"])
    new = state.copy()
    name = new.next_name()
    new.table.add(name, f @ h0 @ f.inverse(), "free")
    new.agens.append(((name, 1),))
    new.agens.append(new.table.reduce(((T_NAME, 1), (name, 1)) + new.table.inverse(tuple(v_word))))
    _record_step(new, FREE_CASE, v_word, name, cert, len(new.agens) - 1)
    return new


def step_hnn(state: TowerState, v_word, seed: int | None = None) -> TowerState:
    """G1 = <G, f | f^-1 t f = v>, A1 = <A, f>; returns a new state."""
    seed = _stage_seed(state) if seed is None else seed
    pm = state.params
    cap = pm["exponentCap"]
    v = state.evaluate(v_word)
    g_letters = factor_alphabet(state.table, state.table.names, cap)
    conj = Ball(state.g_letters(1), pm["conjRadius"], state.n)
    ell, cert = embed_hnn(g_letters, state.t, v, pm["certRadius"], conj, pm["LmaxExp"], seed,
                          pm["retryCap"], pm["heightBound"], exponent_cap=cap)
    new = state.copy()
    name = new.next_name()
    new.table.add(name, ell, "hnn")
    new.agens.append(((name, 1),))
    _record_step(new, HNN_CASE, v_word, name, cert, len(new.agens) - 1)
    return new


# -- the tower loop ----------------------------------------------------------------------


@dataclass
class TowerReport:
    handled: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    certificates: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"handled": self.handled, "skipped": self.skipped, "certificates": self.certificates}


def _candidate_ball(state: TowerState) -> Ball:
    names = state.table.names[: state.cursor["blockSize"]]
    key = ("cand", tuple(names), state.params["enumRadius"])
    if key not in state._cache:
        state._cache[key] = Ball(state.table.ball_letters(names, 1), state.params["enumRadius"], state.n)
    return state._cache[key]


def run_tower(state: TowerState, stages: int, save=None, log=None) -> tuple:
    """Advance until ``stages`` extension steps have been made in total.

    ``save(state)`` is called after every processed candidate, so an
    interrupted run resumes where it stopped.  Returns ``(state, report)``.
    """
    report = TowerReport()
    seen = {state.evaluate(word_from_json(w)) for w in state.processed}
    stalled_blocks = 0
    while state.stages_done < stages:
        cb = _candidate_ball(state)
        i = state.cursor["index"]
        if i >= len(cb):
            grew = len(state.table.names) > state.cursor["blockSize"]
            if not grew:
                stalled_blocks += 1
                if stalled_blocks > 1:
                    raise SearchFailure("candidate enumeration exhausted", {
                        "enumRadius": state.params["enumRadius"], "stagesDone": state.stages_done})
            state.cursor = {"block": state.cursor["block"] + 1,
                            "blockSize": len(state.table.names), "index": 1}
            continue
        v_word = state.table.reduce(cb.label(i))
        v = cb.exact(i)
        state.cursor = {**state.cursor, "index": i + 1}
        if v in seen:
            continue
        seen.add(v)
        cls = classify(v_word, state)
        entry = {"v": word_to_json(v_word), **cls.to_json()}
        if cls.case == ALREADY:
            f = cls.f
            state.ledger.append({"v": word_to_json(v_word), "f": word_to_json(f), "case": ALREADY,
                                 "witness": {"word": word_to_json(cls.witness)}})
        elif cls.case == FREE_CASE:
            state = step_free(state, v_word)
            report.certificates.append(state.history[-1]["cert"])
        elif cls.case == HNN_CASE:
            state = step_hnn(state, v_word)
            report.certificates.append(state.history[-1]["cert"])
        else:
            state.skipped.append(entry)
            report.skipped.append(entry)
        state.processed.append(word_to_json(v_word))
        if cls.case != NEEDS_REDUCTION:
            report.handled.append(entry)
        if log:
            log(f"v = {word_str(v_word)}: {cls.case}")
        if save:
            save(state)
    return state, report


"""Bounded-radius checks of the structural claims about a tower state.

Every check works on finite balls of group elements and answers with a
:class:`VerificationReport`.  Negative answers ("no violation") rest on
residue mismatches, which are proofs of inequality; positive findings are
always confirmed by exact rational multiplication before they are reported.
Memberships are radius-qualified: "not in A" always means "not found in
the A-ball of the stated radius".
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ball as fp
from .ball import Ball, ProductIndex
from .embed import involutions_in
from .exactlin import Matrix
from .words import word_to_json

MAX_WITNESSES = 20


@dataclass
class VerificationReport:
    check: str
    passed: bool
    radii: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "pass": self.passed,
            "radii": dict(self.radii),
            "witnesses": list(self.witnesses),
            "notes": dict(self.notes),
        }

    @classmethod
    def from_json(cls, obj) -> "VerificationReport":
        return cls(obj["check"], bool(obj["pass"]), dict(obj.get("radii", {})),
                   list(obj.get("witnesses", [])), dict(obj.get("notes", {})))


def _prime(*letter_lists) -> int:
    return fp.choose_prime([m for letters in letter_lists for _, m in letters])


def _w(label) -> list:
    return word_to_json(label)


def _n_of(*letter_lists) -> int:
    for letters in letter_lists:
        for _, m in letters:
            return m.n
    raise ValueError("no letters given")


# -- malnormality and involutions ----------------------------------------------


def check_malnormal(g_letters, a_letters, radius_g: int, radius_a: int, n: int | None = None) -> VerificationReport:
    """No g of the G-ball outside A conjugates a nontrivial A-ball element
    into the A-ball."""
    n = n or _n_of(g_letters, a_letters)
    rep = VerificationReport("malnormal", True, {"G": radius_g, "A": radius_a})
    p = _prime(g_letters, a_letters)
    gb = Ball(g_letters, radius_g, n, p)
    ab = Ball(a_letters, radius_a, n, p) if a_letters else Ball([], 0, n, p)
    if len(ab) == 1:
        rep.notes["vacuous"] = "A-ball is trivial"
        return rep
    in_a = np.zeros(len(gb), dtype=bool)
    for i, cand in enumerate(ab.lookup_prints(gb.prints)):
        if cand and any(ab.exact(j) == gb.exact(i) for j in cand):
            in_a[i] = True
    if in_a.all():
        rep.notes["degenerate"] = "every G-ball element lies in A"
        return rep
    probe = gb.probe
    split = probe.split_stack(ab.res[1:])
    ginv = gb.inverse_res
    outside = np.flatnonzero(~in_a)
    checked = 0
    for lo in range(0, len(outside), 256):
        chunk = outside[lo:lo + 256]
        keys = probe.sandwich_keys(split, gb.res[chunk], ginv[chunk])
        checked += keys.size
        hits = np.argwhere(ab.print_hits(keys.ravel()).reshape(keys.shape))
        for h, c in hits:
            i = int(chunk[c])
            g = gb.exact(i)
            conj = g @ ab.exact(int(h) + 1) @ g.inverse()
            for j in ab.lookup_prints(keys[h, c:c + 1])[0]:
                if ab.exact(j) == conj:
                    rep.passed = False
                    if len(rep.witnesses) < MAX_WITNESSES:
                        rep.witnesses.append({
                            "g": _w(gb.label(i)), "a": _w(ab.label(int(h) + 1)),
                            "gag^-1": _w(ab.label(j)), "matrix": conj.to_json(),
                        })
                    break
    rep.notes["pairs_checked"] = checked
    rep.notes["g_outside_A"] = int((~in_a).sum())
    return rep


def check_no_involutions(a_letters, radius: int, n: int | None = None) -> VerificationReport:
    rep = VerificationReport("no_involutions", True, {"A": radius})
    if not a_letters:
        return rep
    n = n or _n_of(a_letters)
    ab = Ball(a_letters, radius, n)
    for i in involutions_in(ab):
        rep.passed = False
        if len(rep.witnesses) < MAX_WITNESSES:
            rep.witnesses.append({"word": _w(ab.label(i)), "matrix": ab.exact(i).to_json()})
    return rep


# -- ledger witnesses ------------------------------------------------------------


def check_sharp2trans_witnesses(entries, t: Matrix, a_letters, radius: int,
                                coverage_letters=None, coverage_radius: int = 2) -> VerificationReport:
    """Each entry (v, f) given as matrices must have t f v^-1 in the A-ball.

    ``entries`` is a list of ``(v_word, f_word, v_matrix, f_matrix)``.
    With ``coverage_letters`` the share of G-ball elements v (outside A)
    having some f in the half A-ball with t f v^-1 in the A-ball is reported.
    """
    n = t.n
    rep = VerificationReport("sharp2trans_witnesses", True, {"A": radius})
    if not entries:
        rep.passed = False
        rep.notes["empty"] = "ledger is empty"
        return rep
    idx = ProductIndex(a_letters, radius, n, _prime(a_letters, [((), t)]))
    for v_word, f_word, v, f in entries:
        x = t @ f @ v.inverse()
        pair = idx.find(x)
        if pair is None:
            rep.passed = False
            rep.witnesses.append({"v": _w(v_word), "f": _w(f_word), "tfv^-1": x.to_json()})
    if coverage_letters:
        gb = Ball(coverage_letters, coverage_radius, n, idx.p)
        t_res = fp.reduce_matrix(t, idx.p)
        half = idx.half
        covered = total = 0
        for i in range(1, len(gb)):
            if idx.print_hits(gb.prints[i:i + 1])[0] and idx.find(gb.exact(i)) is not None:
                continue
            total += 1
            keys = idx.probe.keys(half.res, left=t_res, right=gb.inverse_res[i])
            hits = np.flatnonzero(idx.print_hits(keys))
            v_inv = None
            for h in hits:
                if v_inv is None:
                    v_inv = gb.exact(i).inverse()
                if idx.find(t @ half.exact(int(h)) @ v_inv) is not None:
                    covered += 1
                    break
        rep.notes["coverage"] = {"covered": covered, "total": total, "radius": coverage_radius}
    return rep


# -- coset graphs -------------------------------------------------------------------


@dataclass
class ActionBall:
    """Partial Schreier graph of right cosets A g for g in a G-ball.

    ``reps`` are G-ball indices of the coset representatives (length-lex
    first), ``coset_of`` maps every G-ball index to its coset and
    ``edges[(c, s)]`` is the coset of rep(c) * letter s, when identified.
    """

    g_ball: Ball
    index: ProductIndex
    reps: list
    coset_of: list
    edges: dict
    radius_cosets: int
    radius_membership: int

    def __len__(self) -> int:
        return len(self.reps)

    def rep_label(self, c: int) -> tuple:
        return self.g_ball.label(self.reps[c])

    def to_json(self) -> dict:
        return {
            "radii": {"cosets": self.radius_cosets, "membership": self.radius_membership},
            "cosets": [_w(self.rep_label(c)) for c in range(len(self.reps))],
            "edges": [[c, s, d] for (c, s), d in sorted(self.edges.items())],
        }


def _identify(index: ProductIndex, x_res, x_exact, reps_inv_res, reps_exact_inv):
    """First representative d with x rep_d^-1 in A (confirmed), or None."""
    keys = index.probe.keys(reps_inv_res, left=x_res)
    hits = np.flatnonzero(index.print_hits(keys))
    for d in hits:
        m = x_exact() @ reps_exact_inv(int(d))
        if index.confirm(m, index.lookup_prints(keys[d:d + 1])[0]) is not None:
            return int(d)
    return None


def build_action_ball(g_letters, a_letters, radius_cosets: int, radius_membership: int | None = None,
                      n: int | None = None) -> ActionBall:
    """Right cosets of A in G up to word length ``radius_cosets``.

    Ag and Ag' are identified when g' g^-1 is found in the A-ball of radius
    ``radius_membership`` (default twice the coset radius).
    """
    n = n or _n_of(g_letters, a_letters)
    m_rad = 2 * radius_cosets if radius_membership is None else radius_membership
    p = _prime(g_letters, a_letters)
    gb = Ball(g_letters, radius_cosets, n, p)
    index = ProductIndex(a_letters, m_rad, n, p)
    probe = gb.probe
    ginv = gb.inverse_res
    inv_cache: dict = {}

    def exact_inv(i):
        if i not in inv_cache:
            inv_cache[i] = gb.exact(i).inverse()
        return inv_cache[i]

    # pairwise keys of g_i g_j^-1 for all ball elements at once
    pair_keys = probe.product_keys(gb.res, ginv)
    hit = index.print_hits(pair_keys.ravel()).reshape(pair_keys.shape)
    reps: list = []
    coset_of = [-1] * len(gb)
    for i in range(len(gb)):
        found = None
        for c in np.flatnonzero(hit[i, reps]) if reps else ():
            j = reps[c]
            m = gb.exact(i) @ exact_inv(j)
            if index.confirm(m, index.lookup_prints(pair_keys[i, j:j + 1])[0]) is not None:
                found = int(c)
                break
        if found is None:
            found = len(reps)
            reps.append(i)
        coset_of[i] = found
    rep_idx = np.asarray(reps)
    rep_inv = ginv[rep_idx]
    letter_res = gb.letter_res
    edges = {}
    for c, i in enumerate(reps):
        for s in range(len(g_letters)):
            x_res = (gb.res[i] @ letter_res[s]) % p
            d = _identify(index, x_res, lambda: gb.exact(i) @ g_letters[s][1], rep_inv,
                          lambda k: exact_inv(reps[k]))
            if d is not None:
                edges[(c, s)] = d
    return ActionBall(gb, index, reps, coset_of, edges, radius_cosets, m_rad)


def check_pchar2(ab: ActionBall, involution_radius: int | None = None) -> VerificationReport:
    """No involution of the G-ball fixes a coset of the action ball."""
    gb = ab.g_ball
    rad = ab.radius_cosets if involution_radius is None else involution_radius
    rep = VerificationReport("pchar2", True, {"cosets": ab.radius_cosets,
                                              "membership": ab.radius_membership,
                                              "involutions": rad})
    index = ab.index
    invs = [i for i in involutions_in(gb) if len(gb.words[i]) <= rad]
    rep.notes["involutions"] = len(invs)
    rep.notes["cosets"] = len(ab)
    if not invs:
        return rep
    reps = np.asarray(ab.reps)
    r_res = gb.res[reps]
    r_inv = gb.inverse_res[reps]
    for w in invs:
        conj = np.matmul(np.matmul(r_res, gb.res[w][None]) % gb.p, r_inv) % gb.p
        keys = index.probe.keys(conj)
        for c in np.flatnonzero(index.print_hits(keys)):
            g = gb.exact(int(reps[c]))
            m = g @ gb.exact(w) @ g.inverse()
            pair = index.confirm(m, index.lookup_prints(keys[c:c + 1])[0])
            if pair is not None:
                rep.passed = False
                if len(rep.witnesses) < MAX_WITNESSES:
                    rep.witnesses.append({
                        "coset": _w(gb.label(int(reps[c]))), "involution": _w(gb.label(w)),
                        "stabilizer_word": _w(index.label(pair)), "matrix": m.to_json(),
                    })
    return rep


# -- splitting diagnostic -----------------------------------------------------------


def check_commuting_normal_ball(g_letters, radius: int, conj_radius: int = 1,
                                n: int | None = None, max_pairs: int = 20000) -> VerificationReport:
    """Look for commuting x, y (nontrivial, neither a power of the other
    within the ball) whose conjugates by the ``conj_radius``-ball still
    commute pairwise.  Any such pair is reported as a split-type diagnostic.
    """
    n = n or _n_of(g_letters)
    rep = VerificationReport("commuting_normal", True, {"G": radius, "conjugation": conj_radius})
    gb = Ball(g_letters, radius, n)
    probe = gb.probe
    p = gb.p
    keys = probe.product_keys(gb.res, gb.res)
    comm = keys == keys.T
    comm[0, :] = False
    comm[:, 0] = False
    ii, jj = np.nonzero(np.triu(comm, 1))
    cb = min(conj_radius, radius)
    c_idx = np.arange(gb.layer_end(cb))
    c_res, c_inv = gb.res[c_idx], gb.inverse_res[c_idx]
    pairs = 0
    for i, j in zip(ii.tolist(), jj.tolist()):
        x, y = gb.exact(i), gb.exact(j)
        if x @ y != y @ x or _same_cyclic(x, y, radius):
            continue
        pairs += 1
        if pairs > max_pairs:
            rep.notes["truncated"] = True
            break
        cx = np.matmul(np.matmul(c_res, gb.res[i][None]) % p, c_inv) % p
        cy = np.matmul(np.matmul(c_res, gb.res[j][None]) % p, c_inv) % p
        k1 = probe.product_keys(cx, cy)
        k2 = probe.product_keys(cy, cx)
        if not (k1 == k2.T).all():
            continue
        # residues agree everywhere: confirm exactly before reporting
        xs = [gb.exact(int(c)) @ x @ gb.exact(int(c)).inverse() for c in c_idx]
        ys = [gb.exact(int(c)) @ y @ gb.exact(int(c)).inverse() for c in c_idx]
        if all(a @ b == b @ a for a in xs for b in ys):
            rep.passed = False
            if len(rep.witnesses) < MAX_WITNESSES:
                rep.witnesses.append({"x": _w(gb.label(i)), "y": _w(gb.label(j))})
    rep.notes["commuting_pairs"] = pairs
    return rep


def _same_cyclic(x: Matrix, y: Matrix, bound: int) -> bool:
    ident = Matrix.identity(x.n)
    for a, b in ((x, y), (y, x)):
        pw, pinv = ident, ident
        ai = a.inverse()
        for _ in range(bound + 1):
            pw, pinv = pw @ a, pinv @ ai
            if pw == b or pinv == b:
                return True
    return False


# -- embedded action ---------------------------------------------------------------


def check_embedded_action(h_letters, a_letters, a1_letters, radius: int,
                          radius_membership: int | None = None, coset_radius: int | None = None,
                          n: int | None = None) -> VerificationReport:
    """H-ball n A1-ball = H-ball n A-ball (as matrix sets, membership radius
    defaulting to ``radius``), and the coset graph of A\\H embeds in that of
    A1 on H-cosets: identical identifications and edges."""
    n = n or _n_of(h_letters)
    m_rad = radius if radius_membership is None else radius_membership
    c_rad = radius if coset_radius is None else coset_radius
    rep = VerificationReport("embedded_action", True,
                             {"H": radius, "membership": m_rad, "cosets": c_rad})
    p = _prime(h_letters, a_letters, a1_letters)
    hb = Ball(h_letters, radius, n, p)
    ia = ProductIndex(a_letters, m_rad, n, p)
    ia1 = ProductIndex(a1_letters, m_rad, n, p)
    in_a, in_a1 = set(), set()
    for i in range(len(hb)):
        m = hb.exact(i) if (ia.print_hits(hb.prints[i:i + 1])[0] or ia1.print_hits(hb.prints[i:i + 1])[0]) else None
        if m is None:
            continue
        if ia.find(m) is not None:
            in_a.add(i)
        if ia1.find(m) is not None:
            in_a1.add(i)
    rep.notes["H_cap_A"] = len(in_a)
    rep.notes["H_cap_A1"] = len(in_a1)
    for i in sorted(in_a ^ in_a1):
        rep.passed = False
        if len(rep.witnesses) < MAX_WITNESSES:
            rep.witnesses.append({"h": _w(hb.label(i)), "in_A": i in in_a, "in_A1": i in in_a1})
    small = build_action_ball(h_letters, a_letters, c_rad, m_rad, n)
    big = build_action_ball(h_letters, a1_letters, c_rad, m_rad, n)
    same = small.coset_of == big.coset_of and small.edges == big.edges
    rep.notes["cosets"] = len(small)
    if not same:
        rep.passed = False
        diff = [i for i, (a, b) in enumerate(zip(small.coset_of, big.coset_of)) if a != b]
        rep.witnesses.append({"coset_graph_mismatch": [_w(small.g_ball.label(i)) for i in diff[:MAX_WITNESSES]]})
    return rep

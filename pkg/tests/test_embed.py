import random

import pytest

from conftest import rand_invertible
from s2tower.ball import Ball
from s2tower.embed import (
    EmbeddingCertificate,
    check_involutions_conjugate_ball,
    embed_free_product,
    embed_hnn,
    find_conjugator,
    involutions_in,
    replay_certificate,
    scan_ball,
    sub_seed,
    verify_aux_condition,
)
from s2tower.errors import EmbeddingSearchFailure, MissingConjugatorError, PreconditionError
from s2tower.exactlin import Involution, Matrix, projector, scalar_on_subspace
from s2tower.proximal import image_basis
from s2tower.tower import jordan_block
from s2tower.words import FREE, Letter, enumerate_words, factor_alphabet

T6 = Involution.standard(6, 4)


def unipotent_letters(cap: int):
    u = jordan_block(6)
    out = []
    for e in range(1, cap + 1):
        out += [Letter("H", (("u", e),), u ** e), Letter("H", (("u", -e),), u ** -e)]
    return out


@pytest.fixture(scope="module")
def free_embedding():
    g = [Letter("G", (("t", 1),), T6.matrix)]
    h = unipotent_letters(3)
    f, cert = embed_free_product(g, h, projector(T6), radius=4, seed=7, exponent_cap=3)
    return g, h, f, cert


def test_free_embedding_ball_by_direct_evaluation(free_embedding):
    g, h, f, cert = free_embedding
    finv = f.inverse()
    pr = projector(T6)
    w_plus = image_basis(pr)
    checked = 0
    for w in enumerate_words(g + h, 4, FREE):
        if all(a.factor == "G" for a in w.letters):
            continue
        m = Matrix.identity(6)
        for a in w.letters:
            m = m @ (a.matrix if a.factor == "G" else f @ a.matrix @ finv)
        assert not m.is_identity() and not m.is_scalar()
        assert scalar_on_subspace(pr @ m, w_plus) is None
        checked += 1
    assert checked == cert.checked_words
    assert cert.aux and not cert.violations
    assert 2 <= cert.scheme.L <= 2 ** 10


def test_free_certificate_replays(free_embedding):
    *_, cert = free_embedding
    back = EmbeddingCertificate.from_json(cert.to_json())
    assert back.to_json() == cert.to_json()
    rep = replay_certificate(back)
    assert rep.ok, rep.failed()
    assert replay_certificate(back, method="exact").ok


def test_altered_scale_is_a_replay_mismatch(free_embedding):
    *_, cert = free_embedding
    obj = cert.to_json()
    obj["scheme"]["L"] = str(cert.scheme.L * 2)
    rep = replay_certificate(EmbeddingCertificate.from_json(obj))
    assert not rep.ok
    assert "ell_matches_scheme" in rep.failed()


def test_scan_methods_agree(free_embedding):
    g, h, f, cert = free_embedding
    finv = f.inverse()
    images = [a.matrix for a in g] + [f @ a.matrix @ finv for a in h]
    kw = dict(pr=projector(T6), w_basis=T6.w_plus, skip=lambda w: all(j == 0 for j in w))
    a = scan_ball(g + h, images, 3, FREE, method="modp", **kw)
    b = scan_ball(g + h, images, 3, FREE, method="exact", **kw)
    assert (a.checked, a.violations) == (b.checked, b.violations)


def test_scan_reports_identity_word():
    # the H-letter is realized by the inverse of the G-letter, so "a s" collapses
    a = Matrix([[1, 1, 0], [0, 1, 0], [0, 0, 1]])
    t = Involution.standard(3, 1)
    al = [Letter("G", (("a", 1),), a), Letter("H", (("s", 1),), a)]
    images = [a, a.inverse()]
    res = scan_ball(al, images, 2, FREE, pr=projector(t), w_basis=t.w_plus,
                    skip=lambda w: len(w) == 0, method="exact")
    assert res.checked == 2 + 2
    assert {"letters": [0, 1], "reason": "identity",
            "word": [{"gen": "a", "pow": 1}, {"gen": "s", "pow": 1}]} in res.violations


def test_free_embedding_rejects_scalar_letters():
    g = [Letter("G", (("t", 1),), T6.matrix)]
    h = [Letter("H", (("z", 1),), Matrix.scalar(6, -1))]
    with pytest.raises(PreconditionError):
        embed_free_product(g, h, projector(T6), radius=2)


def test_exhausted_retries_raise():
    g = [Letter("G", (("t", 1),), T6.matrix)]
    with pytest.raises(EmbeddingSearchFailure):
        embed_free_product(g, unipotent_letters(1), projector(T6), radius=2, retry_cap=0)


# -- HNN ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def hnn_embedding(boot_state):
    state = boot_state
    g = factor_alphabet(state.table, state.table.names, 3)
    conj = Ball(state.g_letters(1), 4, 6)
    rng = random.Random(2)
    # a random ball conjugate of t different from t
    while True:
        c = conj.exact(rng.randrange(1, len(conj)))
        v = c.inverse() @ T6.matrix @ c
        if v != T6.matrix:
            break
    ell, cert = embed_hnn(g, T6, v, 4, conj, seed=3, exponent_cap=3)
    return g, conj, v, ell, cert


def test_hnn_relation_is_exact(hnn_embedding):
    _, _, v, ell, cert = hnn_embedding
    assert ell.inverse() @ T6.matrix @ ell == v
    assert cert.h.inverse() @ T6.matrix @ cert.h == v
    assert cert.aux and not cert.violations


def test_hnn_certificate_replays(hnn_embedding):
    *_, cert = hnn_embedding
    rep = replay_certificate(EmbeddingCertificate.from_json(cert.to_json()))
    assert rep.ok, rep.failed()
    assert rep.results["relation"] and rep.results["infinite_order_bound"]


def test_hnn_preconditions(boot_state, hnn_embedding):
    g, conj, *_ = hnn_embedding
    with pytest.raises(PreconditionError):
        embed_hnn(g, T6, jordan_block(6), 2, conj)
    with pytest.raises(PreconditionError):
        embed_hnn(g, T6, T6.matrix, 2, conj)
    c = rand_invertible(random.Random(4), 6)
    far = c.inverse() @ T6.matrix @ c
    with pytest.raises(MissingConjugatorError):
        embed_hnn(g, T6, far, 2, conj)


def test_find_conjugator_matches_exact_search(boot_state):
    ball = Ball(boot_state.g_letters(1), 3, 6)
    v = boot_state.evaluate((("u", 1), ("t", 1), ("u", -1)))
    i = find_conjugator(T6.matrix, v, ball)
    exact = next(j for j in range(len(ball)) if T6.matrix @ ball.exact(j) == ball.exact(j) @ v)
    assert i == exact


# -- checks over group balls ------------------------------------------------------------


def test_involutions_in_ball_by_squaring(boot_state):
    ball = Ball(boot_state.g_letters(1), 3, 6)
    expected = [i for i in range(len(ball))
                if not ball.exact(i).is_identity() and (ball.exact(i) @ ball.exact(i)).is_identity()]
    assert involutions_in(ball) == expected
    assert expected  # t itself at least


def test_bootstrap_ball_involutions_conjugate_and_aux(boot_state):
    ball = Ball(boot_state.g_letters(3), 4, 6)
    conj = Ball(boot_state.g_letters(1), 4, 6, ball.p)
    assert check_involutions_conjugate_ball(ball, T6.matrix, conj).ok
    assert verify_aux_condition(ball, T6).ok


def test_aux_condition_flags_scalar_projection():
    # s = 1 + E_51 acts trivially on W+ modulo W-, so Pr s is the identity on W+
    s = Matrix.identity(6) + Matrix([[int(i == 4 and j == 0) for j in range(6)] for i in range(6)])
    ball = Ball([((("s", 1),), s)], 1, 6)
    rep = verify_aux_condition(ball, T6)
    assert not rep.ok
    assert rep.witnesses["aux"] == [[{"gen": "s", "pow": 1}]]


def test_missing_conjugate_is_reported():
    other = Matrix.diag([1, 1, -1, -1, -1, -1])  # det 1, different eigenspace dims
    letters = [((("t", 1),), T6.matrix), ((("o", 1),), other)]
    ball = Ball(letters, 1, 6)
    rep = check_involutions_conjugate_ball(ball, T6.matrix, ball)
    assert not rep.ok


def test_sub_seed_is_deterministic_and_spreads():
    assert sub_seed(7, 1) == sub_seed(7, 1)
    assert len({sub_seed(7, i) for i in range(100)}) == 100
    assert sub_seed(7, 1, 2) != sub_seed(7, 2, 1)

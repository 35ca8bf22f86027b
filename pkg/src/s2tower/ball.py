"""Finite balls of matrix-group elements, indexed by modular fingerprints.

Reduction mod a prime p is a ring homomorphism on rational matrices whose
denominators are prime to p, and for determinant-one generators every
product and inverse stays in that ring.  Two consequences are used
throughout:

* different residues mod p  =>  different exact matrices (a proof);
* equal residues only nominate a candidate, which is then confirmed by
  exact rational multiplication before anything is claimed.

A :class:`Ball` stores, for every distinct element, its length-lex minimal
word, its residue matrix and (lazily) its exact matrix.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .exactlin import Matrix

# n * p^2 must stay below 2**63 for int64 matmul and dot products: n <= 16.
MAX_DIM = 16
PRIMES = (536870909, 536870879, 536870869)

_KEY_WEIGHTS = np.random.default_rng(20240917).integers(
    1, 2**63, size=32 * 32, dtype=np.uint64
) | np.uint64(1)


def reduce_matrix(m: Matrix, p: int) -> np.ndarray:
    den = m.denominator % p
    if den == 0:
        raise InvalidInputError(f"denominator divisible by {p}")
    inv = pow(den, -1, p)
    flat = [(x % p) * inv % p for x in m.numerators]
    return np.array(flat, dtype=np.int64).reshape(m.n, m.n)


def choose_prime(matrices: Sequence[Matrix]) -> int:
    for p in PRIMES:
        if all(m.denominator % p for m in matrices):
            return p
    raise InvalidInputError("no fingerprint prime available for these matrices")


def matvec_mod(m: np.ndarray, v: np.ndarray, p: int) -> np.ndarray:
    """(m @ v) mod p over the last axis, exactly, through float64 BLAS.

    v is split into 15-bit halves so that every partial sum stays below
    2**53 for entries < 2**29 and n <= 16.
    """
    mf = m.astype(np.float64) if m.dtype != np.float64 else m
    shape = mf.shape[:-1]
    mf = mf.reshape(-1, mf.shape[-1])
    both = np.stack([(v & 0x7FFF), (v >> 15)], axis=1).astype(np.float64)
    r = (mf @ both).astype(np.int64)
    return ((r[:, 1] % p) * 32768 + r[:, 0]).reshape(shape) % p


def _check_dim(n: int) -> None:
    if n > MAX_DIM:
        raise InvalidInputError(f"fingerprinting supports n <= {MAX_DIM}")


def reduce_stack(mats: Sequence[Matrix], p: int, n: int) -> np.ndarray:
    if not mats:
        return np.zeros((0, n, n), dtype=np.int64)
    return np.stack([reduce_matrix(m, p) for m in mats])


def mulmod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    return np.matmul(a, b) % p


def keys_of(res: np.ndarray) -> np.ndarray:
    """64-bit hash of each residue matrix in a (k, n, n) stack."""
    k = res.shape[0]
    flat = res.reshape(k, -1).astype(np.uint64)
    return (flat * _KEY_WEIGHTS[: flat.shape[1]]).sum(axis=1, dtype=np.uint64)


def identity_res(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.int64)


def is_scalar_res(res: np.ndarray) -> np.ndarray:
    """Boolean mask: which residue matrices are scalar mod p."""
    n = res.shape[-1]
    diag = np.diagonal(res, axis1=-2, axis2=-1)
    off = res * (1 - np.eye(n, dtype=np.int64))
    return (diag == diag[..., :1]).all(axis=-1) & (off == 0).all(axis=(-2, -1))


def is_identity_res(res: np.ndarray) -> np.ndarray:
    n = res.shape[-1]
    return (res == np.eye(n, dtype=np.int64)).all(axis=(-2, -1))


class Probe:
    """Bilinear fingerprints x^T (L m R) y of residue matrices.

    Two probe pairs give one combined 58-bit key per matrix.  Because the
    key is bilinear, keys of conjugates and of pairwise products can be
    computed without forming the products.
    """

    def __init__(self, p: int, n: int):
        _check_dim(n)
        rng = np.random.default_rng(20240918)
        self.p = p
        self.n = n
        self.x = rng.integers(1, p, size=(2, n), dtype=np.int64)
        self.y = rng.integers(1, p, size=(2, n), dtype=np.int64)

    def _vecs(self, left, right):
        u = self.x if left is None else (self.x @ left) % self.p
        w = self.y if right is None else ((right @ self.y.T) % self.p).T
        return u, w

    def rows(self, res: np.ndarray, left: np.ndarray | None = None) -> np.ndarray:
        """(k, 2, n): x_s^T (left m) for each m."""
        u, _ = self._vecs(left, None)
        return np.stack([np.matmul(u[s], res) % self.p for s in range(2)], axis=1)

    def cols(self, res: np.ndarray, right: np.ndarray | None = None) -> np.ndarray:
        """(k, 2, n): (m right) y_s for each m."""
        _, w = self._vecs(None, right)
        return np.stack([np.matmul(res, w[s]) % self.p for s in range(2)], axis=1)

    @staticmethod
    def as_float(res: np.ndarray) -> np.ndarray:
        return res.astype(np.float64)

    def combine(self, f0: np.ndarray, f1: np.ndarray) -> np.ndarray:
        return (f0 % self.p) * self.p + (f1 % self.p)

    def keys(self, res: np.ndarray, left: np.ndarray | None = None,
             right: np.ndarray | None = None) -> np.ndarray:
        """Key of left @ m @ right for each m of the stack.

        ``res`` may be passed as float64 (see :meth:`as_float`) to skip the
        conversion when the same stack is probed repeatedly.
        """
        if len(res) == 0:
            return np.zeros(0, dtype=np.int64)
        u, w = self._vecs(left, right)
        f = [matvec_mod(matvec_mod(res, w[s], self.p), u[s], self.p) for s in range(2)]
        return self.combine(f[0], f[1])

    @staticmethod
    def split_stack(res: np.ndarray) -> tuple:
        """(lo, hi) float64 (k, n*n) halves of a residue stack, entries < 2**15."""
        flat = res.reshape(len(res), -1)
        return (flat & 0x7FFF).astype(np.float64), (flat >> 15).astype(np.float64)

    def sandwich_keys(self, split: tuple, lefts: np.ndarray, rights: np.ndarray) -> np.ndarray:
        """(k, c) keys of lefts[j] @ m_i @ rights[j] for a split stack m.

        One float64 GEMM per probe and half; every partial sum stays below
        2**53, so the result is exact.
        """
        lo, hi = split
        p = self.p
        c, n = len(lefts), self.n
        f = []
        for s in range(2):
            u = np.matmul(self.x[s], lefts) % p
            w = np.matmul(rights, self.y[s]) % p
            outer = ((u[:, :, None] * w[:, None, :]) % p).reshape(c, n * n).T.astype(np.float64)
            r_lo = (lo @ outer).astype(np.int64)
            r_hi = (hi @ outer).astype(np.int64)
            f.append(((r_hi % p) * 32768 + r_lo) % p)
        return self.combine(f[0], f[1])

    def product_keys(self, lres: np.ndarray, rres: np.ndarray) -> np.ndarray:
        """(k, k') keys of a @ b for a in lres, b in rres."""
        u = self.rows(lres)
        w = self.cols(rres)
        f0 = (u[:, 0] @ w[:, 0].T) % self.p
        f1 = (u[:, 1] @ w[:, 1].T) % self.p
        return self.combine(f0, f1)


BUCKET_BITS = 24


def bucket_table(keys: np.ndarray) -> np.ndarray:
    table = np.zeros(1 << BUCKET_BITS, dtype=bool)
    table[keys & ((1 << BUCKET_BITS) - 1)] = True
    return table


def sorted_hits(sorted_keys: np.ndarray, q: np.ndarray, table: np.ndarray | None = None) -> np.ndarray:
    """Membership of each query in a sorted key array; ``table`` (from
    :func:`bucket_table`) prefilters most misses."""
    out = np.zeros(len(q), dtype=bool)
    if len(sorted_keys) == 0 or len(q) == 0:
        return out
    idx = np.arange(len(q)) if table is None else np.flatnonzero(table[q & ((1 << BUCKET_BITS) - 1)])
    if len(idx) == 0:
        return out
    sub = q[idx]
    pos = np.searchsorted(sorted_keys, sub)
    pos[pos == len(sorted_keys)] = 0
    out[idx] = sorted_keys[pos] == sub
    return out


class Ball:
    """All elements of word length <= radius in the given letters.

    ``letters`` is a list of ``(label, matrix)``; the caller decides which
    letters are present (inverses, powers). Elements are deduplicated by
    residue, and each is represented by its length-lex first word, given as
    a tuple of letter indices.
    """

    def __init__(self, letters, radius: int, n: int, prime: int | None = None,
                 max_size: int = 2_000_000):
        self.letters = list(letters)
        self.radius = radius
        self.n = n
        mats = [m for _, m in self.letters]
        self.p = prime if prime is not None else choose_prime(mats)
        self.letter_res = reduce_stack(mats, self.p, n)
        self.words: list[tuple] = [()]
        self.parent: list[int] = [-1]
        self.last: list[int] = [-1]
        self.layer_start = [0]
        self._exact: dict[int, Matrix] = {0: Matrix.identity(n)}
        chunks = [identity_res(n)[None]]
        key_list = [keys_of(chunks[0])]
        self._index: dict[int, list[int]] = {int(key_list[0][0]): [0]}
        frontier = np.array([0])
        frontier_res = chunks[0]
        m = len(self.letters)
        for _ in range(radius):
            if len(frontier) == 0 or m == 0:
                break
            self.layer_start.append(len(self.words))
            new_idx, new_res = [], []
            for lo in range(0, len(frontier), 4096):
                fr = frontier_res[lo:lo + 4096]
                prod = np.matmul(fr[:, None], self.letter_res[None]) % self.p
                prod = prod.reshape(-1, n, n)
                ks = keys_of(prod)
                for pos, key in enumerate(ks.tolist()):
                    row = prod[pos]
                    hit = self._index.get(key)
                    if hit is not None and any(
                        np.array_equal(self._res_of(i, chunks, new_res), row) for i in hit
                    ):
                        continue
                    par = int(frontier[lo + pos // m])
                    let = pos % m
                    idx = len(self.words)
                    self.words.append(self.words[par] + (let,))
                    self.parent.append(par)
                    self.last.append(let)
                    self._index.setdefault(key, []).append(idx)
                    new_idx.append(idx)
                    new_res.append(row)
                    if idx >= max_size:
                        raise InvalidInputError(f"ball exceeds {max_size} elements")
            if not new_idx:
                break
            frontier = np.array(new_idx)
            frontier_res = np.stack(new_res)
            chunks.append(frontier_res)
        self._inv_res = None
        self.res = np.concatenate(chunks)
        self.keys = keys_of(self.res)
        self.probe = Probe(self.p, n)
        self.prints = self.probe.keys(self.res)
        self._order = np.argsort(self.prints, kind="stable")
        self._sorted = self.prints[self._order]
        self._table = None

    def _res_of(self, i, chunks, pending):
        # residue lookup while the ball is still being built
        start = 0
        for c in chunks:
            if i < start + len(c):
                return c[i - start]
            start += len(c)
        return pending[i - start]

    def __len__(self) -> int:
        return len(self.words)

    def exact(self, i: int) -> Matrix:
        m = self._exact.get(i)
        if m is None:
            m = self.exact(self.parent[i]) @ self.letters[self.last[i]][1]
            self._exact[i] = m
        return m

    def label(self, i: int) -> tuple:
        """Concatenated letter labels of element ``i`` (not reduced)."""
        out = []
        for j in self.words[i]:
            out.extend(self.letters[j][0])
        return tuple(out)

    @property
    def inverse_res(self) -> np.ndarray:
        """Residues of the inverses of all elements, in ball order."""
        if self._inv_res is None:
            inv_letters = reduce_stack([m.inverse() for _, m in self.letters], self.p, self.n)
            out = np.empty_like(self.res)
            out[0] = identity_res(self.n)
            par = np.asarray(self.parent)
            last = np.asarray(self.last)
            bounds = self.layer_start + [len(self.words)]
            for lo, hi in zip(bounds[1:-1], bounds[2:]):
                out[lo:hi] = np.matmul(inv_letters[last[lo:hi]], out[par[lo:hi]]) % self.p
            self._inv_res = out
        return self._inv_res

    def layer_end(self, r: int) -> int:
        """Number of elements of word length <= r."""
        if r + 1 < len(self.layer_start):
            return self.layer_start[r + 1]
        return len(self.words)

    def lookup_prints(self, q: np.ndarray) -> list[list[int]]:
        """Indices whose probe key equals each query key (unconfirmed)."""
        lo = np.searchsorted(self._sorted, q, side="left")
        hi = np.searchsorted(self._sorted, q, side="right")
        return [self._order[a:b].tolist() for a, b in zip(lo, hi)]

    def print_hits(self, q: np.ndarray) -> np.ndarray:
        if self._table is None:
            self._table = bucket_table(self._sorted)
        return sorted_hits(self._sorted, q, self._table)

    def letter_word(self, i: int) -> tuple:
        return self.words[i]

    def candidates(self, res_row: np.ndarray) -> list[int]:
        """Indices whose residue equals ``res_row`` (unconfirmed)."""
        key = int(keys_of(res_row[None])[0])
        return [i for i in self._index.get(key, ()) if np.array_equal(self.res[i], res_row)]

    def candidates_many(self, res_stack: np.ndarray) -> list[list[int]]:
        out = []
        for pos, key in enumerate(keys_of(res_stack).tolist()):
            hit = self._index.get(key)
            if hit is None:
                out.append([])
            else:
                out.append([i for i in hit if np.array_equal(self.res[i], res_stack[pos])])
        return out

    def hits(self, res_stack: np.ndarray) -> np.ndarray:
        """Boolean mask of rows whose key occurs in the ball (superset of true hits)."""
        if len(res_stack) == 0:
            return np.zeros(0, dtype=bool)
        return np.isin(keys_of(res_stack), self.keys)

    def find(self, m: Matrix) -> int | None:
        """Index of the element exactly equal to ``m``, if it lies in the ball."""
        try:
            row = reduce_matrix(m, self.p)
        except InvalidInputError:
            return None
        for i in self.candidates(row):
            if self.exact(i) == m:
                return i
        return None

    def residue(self, m: Matrix) -> np.ndarray:
        return reduce_matrix(m, self.p)


class ProductIndex:
    """Membership in a ball of radius M via products of two half balls.

    Every element of word length <= M is a product of one of length
    <= ceil(M/2) and one of length <= floor(M/2), so the probe keys of all
    such products cover the radius-M ball.  Hits are confirmed exactly.
    """

    def __init__(self, letters, radius: int, n: int, prime: int | None = None,
                 max_keys: int = 40_000_000):
        self.radius = radius
        self.half = Ball(letters, (radius + 1) // 2, n, prime)
        self.p = self.half.p
        self.n = n
        self.right = self.half.layer_end(radius // 2)
        if len(self.half) * self.right > max_keys:
            raise InvalidInputError(
                f"membership index of radius {radius} needs {len(self.half) * self.right} keys")
        keys = self.half.probe.product_keys(self.half.res, self.half.res[: self.right])
        flat = keys.ravel()
        self._order = np.argsort(flat, kind="stable")
        self._sorted = flat[self._order]
        self._table = None
        self.probe = self.half.probe

    def __len__(self) -> int:
        return len(self._sorted)

    def _pairs(self, flat_positions) -> list:
        return [divmod(int(x), self.right) for x in flat_positions]

    def lookup_prints(self, q: np.ndarray) -> list[list]:
        lo = np.searchsorted(self._sorted, q, side="left")
        hi = np.searchsorted(self._sorted, q, side="right")
        return [self._pairs(self._order[a:b]) for a, b in zip(lo, hi)]

    def print_hits(self, q: np.ndarray) -> np.ndarray:
        if self._table is None:
            self._table = bucket_table(self._sorted)
        return sorted_hits(self._sorted, q, self._table)

    def pair_matrix(self, pair) -> Matrix:
        i, j = pair
        return self.half.exact(i) @ self.half.exact(j)

    def confirm(self, m: Matrix, pairs) -> tuple | None:
        for pair in pairs:
            if self.pair_matrix(pair) == m:
                return pair
        return None

    def find(self, m: Matrix) -> tuple | None:
        """A pair (i, j) with half[i] @ half[j] == m exactly, if any."""
        try:
            row = reduce_matrix(m, self.p)
        except InvalidInputError:
            return None
        q = self.probe.keys(row[None])
        return self.confirm(m, self.lookup_prints(q)[0])

    def label(self, pair) -> tuple:
        i, j = pair
        return self.half.label(i) + self.half.label(j)

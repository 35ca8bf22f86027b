"""Words: generator words, free-product words and Britton-reduced HNN words.

Two levels of word are used.

* A *generator word* is a tuple of ``(name, power)`` syllables over the
  generators of a :class:`GeneratorTable`.  It is what gets stored in state
  files, ledgers and certificates.
* A *structured word* (:class:`FreeWord`, :class:`HnnWord`) is a sequence of
  :class:`Letter` objects, each one an element of a factor group (or a
  stable letter).  Letters carry their exact matrix, so triviality inside a
  factor is decided by matrix equality.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import InvalidInputError, MissingAssignmentError
from .exactlin import Matrix

Word = tuple  # tuple[tuple[str, int], ...]

FREE = "free"
HNN = "hnn"


def word_to_json(w: Word) -> list:
    return [{"gen": g, "pow": int(e)} for g, e in w]


def word_from_json(obj) -> Word:
    return tuple((s["gen"], int(s["pow"])) for s in obj)


def word_str(w: Word) -> str:
    if not w:
        return "1"
    return " ".join(g if e == 1 else f"{g}^{e}" for g, e in w)


def free_reduce(w: Iterable, orders: dict | None = None) -> Word:
    """Cancel and merge adjacent syllables; powers of order-2 generators mod 2."""
    orders = orders or {}
    out: list = []
    for g, e in w:
        if out and out[-1][0] == g:
            e += out.pop()[1]
        o = orders.get(g, 0)
        if o:
            e %= o
        if e:
            out.append((g, e))
    return tuple(out)


def inverse_word(w: Word, orders: dict | None = None) -> Word:
    return free_reduce(((g, -e) for g, e in reversed(w)), orders)


@dataclass
class GeneratorTable:
    """Named determinant-one generators, each tagged with its factor."""

    names: list = field(default_factory=list)
    matrices: dict = field(default_factory=dict)
    factors: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)

    def add(self, name: str, matrix: Matrix, factor: str = "G") -> None:
        if name in self.matrices:
            raise InvalidInputError(f"generator {name!r} already present")
        if matrix.det() != 1:
            raise InvalidInputError(f"generator {name!r} does not have determinant 1")
        if self.names and matrix.n != self.n:
            raise InvalidInputError("dimension mismatch")
        self.names.append(name)
        self.matrices[name] = matrix
        self.factors[name] = factor
        ident = Matrix.identity(matrix.n)
        self.orders[name] = 2 if (matrix != ident and matrix @ matrix == ident) else 0

    @property
    def n(self) -> int:
        return self.matrices[self.names[0]].n

    def __contains__(self, name) -> bool:
        return name in self.matrices

    def matrix(self, name: str, power: int = 1) -> Matrix:
        try:
            m = self.matrices[name]
        except KeyError:
            raise MissingAssignmentError(f"no matrix assigned to {name!r}") from None
        if power == 1:
            return m
        if power == -1:
            return m.inverse()
        return m ** power

    def evaluate(self, w: Word) -> Matrix:
        out = Matrix.identity(self.n)
        for g, e in w:
            out = out @ self.matrix(g, e)
        return out

    def reduce(self, w: Iterable) -> Word:
        return free_reduce(w, self.orders)

    def inverse(self, w: Word) -> Word:
        return inverse_word(w, self.orders)

    def syllables(self, names: Sequence[str] | None = None, cap: int = 1) -> list:
        """Letters g^e, 1 <= |e| <= cap (only g for involutions), in a fixed order."""
        out = []
        for g in self.names if names is None else names:
            if self.orders[g] == 2:
                out.append(((g, 1),))
                continue
            for e in range(1, cap + 1):
                out.append(((g, e),))
                out.append(((g, -e),))
        return out

    def ball_letters(self, names: Sequence[str] | None = None, cap: int = 1) -> list:
        """(label, matrix) pairs for :class:`s2tower.ball.Ball`."""
        return [(lab, self.evaluate(lab)) for lab in self.syllables(names, cap)]

    def restrict(self, names: Sequence[str]) -> "GeneratorTable":
        sub = GeneratorTable()
        for g in names:
            sub.add(g, self.matrices[g], self.factors[g])
        return sub

    def copy(self) -> "GeneratorTable":
        return self.restrict(self.names)

    def to_json(self) -> list:
        return [
            {"name": g, "factor": self.factors[g], "matrix": self.matrices[g].to_json()}
            for g in self.names
        ]

    @classmethod
    def from_json(cls, obj) -> "GeneratorTable":
        table = cls()
        for item in obj:
            table.add(item["name"], Matrix.from_json(item["matrix"]), item.get("factor", "G"))
        return table


# -- structured words --------------------------------------------------------


@dataclass(frozen=True)
class Letter:
    """One letter of a structured word.

    ``factor`` is "G" for base-group letters, any other tag (conventionally
    "H" or "f") for the second free factor, and "k" for a stable letter.
    ``matrix`` is the value inside its own factor; stable letters have none.
    """

    factor: str
    label: Word
    matrix: Matrix | None = None

    @property
    def is_stable(self) -> bool:
        return self.factor == "k"

    @property
    def power(self) -> int:
        return self.label[0][1]

    def __repr__(self) -> str:
        return f"<{self.factor}:{word_str(self.label)}>"


def stable_letter(delta: int, name: str = "k") -> Letter:
    if delta not in (1, -1):
        raise InvalidInputError("stable letters have power +-1")
    return Letter("k", ((name, delta),), None)


def letter_label(letters: Iterable[Letter]) -> Word:
    out = []
    for a in letters:
        out.extend(a.label)
    return tuple(out)


def _merge(a: Letter, b: Letter) -> Letter:
    return Letter(a.factor, free_reduce(a.label + b.label), a.matrix @ b.matrix)


@dataclass(frozen=True)
class FreeWord:
    letters: tuple

    def __len__(self) -> int:
        return len(self.letters)

    def is_reduced(self) -> bool:
        ls = self.letters
        return all(not a.matrix.is_identity() for a in ls) and all(
            ls[i].factor != ls[i + 1].factor for i in range(len(ls) - 1)
        )

    def in_base(self, base: str = "G") -> bool:
        return all(a.factor == base for a in self.letters)

    def label(self) -> Word:
        return letter_label(self.letters)

    def inverse(self) -> "FreeWord":
        return FreeWord(tuple(
            Letter(a.factor, inverse_word(a.label), a.matrix.inverse()) for a in reversed(self.letters)
        ))

    def to_json(self) -> list:
        return word_to_json(self.label())


def reduce_free(letters: Iterable[Letter]) -> FreeWord:
    """Free-product normal form: merge same-factor neighbours, drop identities."""
    stack: list = []
    for a in letters:
        if a.is_stable:
            raise InvalidInputError("stable letter in a free-product word")
        if stack and stack[-1].factor == a.factor:
            a = _merge(stack.pop(), a)
        if not a.matrix.is_identity():
            stack.append(a)
    return FreeWord(tuple(stack))


@dataclass(frozen=True)
class HnnWord:
    """g1 k^d1 g2 ... k^dm g(m+1) for the relation k^-1 t k = t.

    Absent G-letters stand for the identity.
    """

    letters: tuple
    t: Matrix

    def __len__(self) -> int:
        return len(self.letters)

    @property
    def stable_count(self) -> int:
        return sum(a.is_stable for a in self.letters)

    def is_reduced(self) -> bool:
        return is_britton_reduced(self.letters, self.t)

    def label(self) -> Word:
        return letter_label(self.letters)

    def to_json(self) -> list:
        return word_to_json(self.label())


def _is_pinch(a: Letter, g: Letter, b: Letter, t: Matrix) -> bool:
    return (
        a.is_stable and b.is_stable and not g.is_stable
        and a.power == -b.power and (g.matrix == t or g.matrix.is_identity())
    )


def is_britton_reduced(letters: Sequence[Letter], t: Matrix) -> bool:
    for i, a in enumerate(letters):
        if not a.is_stable and a.matrix.is_identity():
            return False
        if i + 1 < len(letters):
            b = letters[i + 1]
            if not a.is_stable and not b.is_stable:
                return False
            if a.is_stable and b.is_stable and a.power == -b.power:
                return False
        if i + 2 < len(letters) and _is_pinch(a, letters[i + 1], letters[i + 2], t):
            return False
    return True


def britton_reduce(letters: Iterable[Letter], t: Matrix) -> HnnWord:
    """Remove pinches k^-e g k^e with g in {1, t}, using k^-1 t k = t.

    The stack is kept reduced after every push, so one left-to-right pass
    suffices.
    """
    stack: list = []

    def push_base(g: Letter):
        if stack and not stack[-1].is_stable:
            g = _merge(stack.pop(), g)
        if not g.matrix.is_identity():
            stack.append(g)

    for a in letters:
        if not a.is_stable:
            push_base(a)
            continue
        if stack and stack[-1].is_stable and stack[-1].power == -a.power:
            stack.pop()
            continue
        if (
            len(stack) >= 2 and not stack[-1].is_stable and stack[-1].matrix == t
            and stack[-2].is_stable and stack[-2].power == -a.power
        ):
            g = stack.pop()
            stack.pop()
            push_base(g)
            continue
        stack.append(a)
    return HnnWord(tuple(stack), t)


# -- enumeration -------------------------------------------------------------


def _allowed_free(prev: Letter | None, prev2: Letter | None, a: Letter, t) -> bool:
    return prev is None or prev.factor != a.factor


def _allowed_hnn(prev: Letter | None, prev2: Letter | None, a: Letter, t) -> bool:
    if prev is None:
        return True
    if not a.is_stable:
        return prev.is_stable
    if prev.is_stable:
        return prev.power != -a.power
    if prev.matrix == t and prev2 is not None and prev2.is_stable and prev2.power == -a.power:
        return False
    return True


def iter_word_layers(alphabet: Sequence[Letter], radius: int, form: str, t: Matrix | None = None):
    """Yield ``(words, parents)`` for each length 0..radius.

    ``words`` lists the reduced words of that length as tuples of alphabet
    indices in lexicographic order; ``parents[i]`` is the position of
    ``words[i][:-1]`` in the previous layer.
    """
    if radius < 0:
        raise InvalidInputError("radius must be >= 0")
    allowed = _allowed_free if form == FREE else _allowed_hnn
    for a in alphabet:
        if not a.is_stable and a.matrix.is_identity():
            raise InvalidInputError(f"identity letter {a!r} in alphabet")
    m = len(alphabet)
    layer = [()]
    yield layer, [-1]
    for _ in range(radius):
        nxt, parents = [], []
        for pos, w in enumerate(layer):
            prev = alphabet[w[-1]] if w else None
            prev2 = alphabet[w[-2]] if len(w) > 1 else None
            for j in range(m):
                if allowed(prev, prev2, alphabet[j], t):
                    nxt.append(w + (j,))
                    parents.append(pos)
        if not nxt:
            break
        layer = nxt
        yield layer, parents


def enumerate_words(alphabet: Sequence[Letter], radius: int, form: str = FREE,
                    t: Matrix | None = None) -> Iterator:
    """Reduced structured words of length <= radius, length-lex, each once."""
    for layer, _ in iter_word_layers(alphabet, radius, form, t):
        for w in layer:
            letters = tuple(alphabet[j] for j in w)
            yield FreeWord(letters) if form == FREE else HnnWord(letters, t)


def factor_alphabet(table: GeneratorTable, names: Sequence[str], cap: int,
                    factor: str = "G", radius: int = 1) -> list:
    """Distinct non-identity elements of word length <= radius in the
    syllables g^e (|e| <= cap) of ``names``, as letters of one factor."""
    syl = table.syllables(names, cap)
    seen = {Matrix.identity(table.n)}
    out = []
    layer = [()]
    for _ in range(radius):
        nxt = []
        for w in layer:
            for s in syl:
                if w and w[-1][0] == s[0][0]:
                    continue
                lab = w + s
                m = table.evaluate(lab)
                if m in seen:
                    continue
                seen.add(m)
                out.append(Letter(factor, lab, m))
                nxt.append(lab)
        layer = nxt
    return out


def enumerate_reduced(table: GeneratorTable, radius: int, form: str = FREE, cap: int = 1,
                      t: Matrix | None = None, stable: str = "k") -> Iterator:
    """Reduced words over a table, grouped by its factor tags.

    For ``form="free"`` the table must have exactly two factor tags (the
    first-seen tag is the base); for ``form="hnn"`` the generators tagged
    ``"k"`` are ignored and a stable letter named ``stable`` is used.
    """
    tags = list(dict.fromkeys(table.factors[g] for g in table.names))
    if form == FREE:
        if len(tags) != 2:
            raise InvalidInputError("free form needs exactly two factors")
        alphabet = []
        for tag in tags:
            names = [g for g in table.names if table.factors[g] == tag]
            alphabet += factor_alphabet(table, names, cap, factor=tag)
        return enumerate_words(alphabet, radius, FREE)
    if t is None:
        raise InvalidInputError("hnn form needs the involution t")
    names = [g for g in table.names if table.factors[g] != "k"]
    alphabet = factor_alphabet(table, names, cap) + [stable_letter(1, stable), stable_letter(-1, stable)]
    return enumerate_words(alphabet, radius, HNN, t)


def evaluate(w, table: GeneratorTable | None = None, assignment: dict | None = None) -> Matrix:
    """Exact matrix of a generator word or structured word.

    Structured letters are evaluated through their labels when a table is
    given; ``assignment`` maps a factor tag to a callable (or matrix, for
    the stable letter) overriding that factor's realization.
    """
    assignment = assignment or {}
    if isinstance(w, (FreeWord, HnnWord)):
        out = None
        for a in w.letters:
            m = _letter_value(a, table, assignment)
            out = m if out is None else out @ m
        if out is None:
            if table is not None and table.names:
                return Matrix.identity(table.n)
            if isinstance(w, HnnWord):
                return Matrix.identity(w.t.n)
            raise InvalidInputError("cannot infer dimension of the empty word")
        return out
    if table is None:
        raise InvalidInputError("generator words need a table")
    return table.evaluate(w)


def _letter_value(a: Letter, table, assignment) -> Matrix:
    if a.factor in assignment:
        rule = assignment[a.factor]
        if a.is_stable:
            return rule if a.power == 1 else rule.inverse()
        return rule(a)
    if a.is_stable:
        if table is None:
            raise MissingAssignmentError("stable letter has no assignment")
        return table.evaluate(a.label)
    if table is not None:
        return table.evaluate(a.label)
    return a.matrix

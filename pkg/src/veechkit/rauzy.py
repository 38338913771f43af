"""Permutation pairs, the two Rauzy operations, Rauzy classes and paths.

Letters are stored internally as integer indices into an :class:`Alphabet`;
the alphabet order is the canonical coordinate order for every vector and
matrix built on top of a permutation (length data, weights, cocycles).

Text formats::

    permutation   "a b c / c b a"
    path          "a b / b a : tbtb"
"""

from __future__ import annotations

import enum
import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

TOP = "t"
BOTTOM = "b"
KINDS = (TOP, BOTTOM)

MAX_LETTERS = int(os.environ.get("VEECHKIT_MAX_LETTERS", "10"))


class PermutationError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    letters: tuple[str, ...]

    def __post_init__(self):
        if len(self.letters) < 2:
            raise PermutationError("an alphabet needs at least two letters")
        if len(set(self.letters)) != len(self.letters):
            raise PermutationError(f"repeated letters in {self.letters}")

    def __len__(self) -> int:
        return len(self.letters)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {x: i for i, x in enumerate(self.letters)}

    def index(self, letter: str) -> int:
        try:
            return self._index[letter]
        except KeyError:
            raise PermutationError(f"unknown letter {letter!r}") from None

    def subset(self, letters) -> frozenset[int]:
        """Indices of ``letters``; accepts a string like ``"a,c"`` or an iterable."""
        if isinstance(letters, str):
            letters = [x for x in letters.replace(",", " ").split() if x]
        out = frozenset(self.index(x) if isinstance(x, str) else int(x) for x in letters)
        if not out:
            raise PermutationError("empty letter subset")
        return out


@dataclass(frozen=True)
class Permutation:
    """A pair of bijections ``pi_t, pi_b`` from the alphabet onto ``1..d``.

    ``top`` and ``bottom`` list letter indices in row order, so
    ``pi_t(top[k]) == k + 1``.
    """

    alphabet: Alphabet
    top: tuple[int, ...]
    bottom: tuple[int, ...]

    def __post_init__(self):
        d = len(self.alphabet)
        if len(self.top) != d or len(self.bottom) != d:
            raise PermutationError("rows must contain every letter exactly once")
        if sorted(self.top) != list(range(d)) or sorted(self.bottom) != list(range(d)):
            raise PermutationError("rows must be bijections onto the alphabet")

    @property
    def d(self) -> int:
        return len(self.top)

    @cached_property
    def pos_top(self) -> tuple[int, ...]:
        """``pos_top[x] = pi_t(x)`` (1-based)."""
        out = [0] * self.d
        for k, x in enumerate(self.top):
            out[x] = k + 1
        return tuple(out)

    @cached_property
    def pos_bottom(self) -> tuple[int, ...]:
        out = [0] * self.d
        for k, x in enumerate(self.bottom):
            out[x] = k + 1
        return tuple(out)

    def name(self, x: int) -> str:
        return self.alphabet.letters[x]

    def rows(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        return tuple(map(self.name, self.top)), tuple(map(self.name, self.bottom))

    def text(self) -> str:
        t, b = self.rows()
        return f"{' '.join(t)} / {' '.join(b)}"

    def __str__(self) -> str:
        return self.text()

    def __repr__(self) -> str:
        return f"Permutation({self.text()!r})"

    def apply(self, kind: str) -> "Arrow":
        return apply_operation(self, kind)


def parse_permutation(text: str, alphabet: Alphabet | Sequence[str] | None = None) -> Permutation:
    """Parse ``"a b c / c b a"``.

    Without an explicit alphabet the letter order is the order of the top
    row, which fixes the coordinate order of every derived vector.
    """
    if text.count("/") != 1:
        raise PermutationError(f"expected exactly one '/' in {text!r}")
    top_s, bot_s = (part.split() for part in text.split("/"))
    if len(top_s) != len(bot_s):
        raise PermutationError("rows of unequal length")
    if alphabet is None:
        alphabet = Alphabet(tuple(top_s))
    elif not isinstance(alphabet, Alphabet):
        alphabet = Alphabet(tuple(alphabet))
    if len(top_s) != len(alphabet):
        raise PermutationError("rows do not match the alphabet size")
    if len(alphabet) > MAX_LETTERS:
        raise PermutationError(f"d={len(alphabet)} exceeds the configured cap {MAX_LETTERS}")
    top = tuple(alphabet.index(x) for x in top_s)
    bottom = tuple(alphabet.index(x) for x in bot_s)
    if len(set(top)) != len(top) or len(set(bottom)) != len(bottom):
        raise PermutationError(f"repeated letters in {text!r}")
    return Permutation(alphabet, top, bottom)


def symmetric_permutation(d: int) -> Permutation:
    """The permutation ``a b c ... / ... c b a`` on the first ``d`` letters."""
    if d > 26:
        raise PermutationError("symmetric_permutation supports d <= 26")
    letters = [chr(ord("a") + i) for i in range(d)]
    return parse_permutation(f"{' '.join(letters)} / {' '.join(reversed(letters))}")


def is_irreducible(pi: Permutation) -> bool:
    seen_t: set[int] = set()
    seen_b: set[int] = set()
    for k in range(pi.d - 1):
        seen_t.add(pi.top[k])
        seen_b.add(pi.bottom[k])
        if seen_t == seen_b:
            return False
    return True


@dataclass(frozen=True)
class Arrow:
    start: Permutation
    end: Permutation
    kind: str
    winner: int
    loser: int

    def label(self) -> str:
        return f"{self.kind}:{self.start.name(self.winner)}>{self.start.name(self.loser)}"


def _operate(pi: Permutation, kind: str) -> tuple[tuple[int, ...], tuple[int, ...], int, int]:
    alpha, beta = pi.top[-1], pi.bottom[-1]
    if kind == TOP:
        row = list(pi.bottom[:-1])
        row.insert(row.index(alpha) + 1, beta)
        return pi.top, tuple(row), alpha, beta
    if kind == BOTTOM:
        row = list(pi.top[:-1])
        row.insert(row.index(beta) + 1, alpha)
        return tuple(row), pi.bottom, beta, alpha
    raise PermutationError(f"unknown operation {kind!r}")


def apply_operation(pi: Permutation, kind: str) -> Arrow:
    """The arrow of type ``kind`` starting at ``pi``."""
    if not is_irreducible(pi):
        raise PermutationError(f"{pi} is reducible")
    top, bottom, w, l = _operate(pi, kind)
    return Arrow(pi, Permutation(pi.alphabet, top, bottom), kind, w, l)


@dataclass(frozen=True)
class Path:
    """A path in a Rauzy diagram, stored as a start vertex and a kind string."""

    start: Permutation
    kinds: str = ""

    def __post_init__(self):
        if set(self.kinds) - set(KINDS):
            raise PermutationError(f"path kinds must be over 'tb', got {self.kinds!r}")

    def __len__(self) -> int:
        return len(self.kinds)

    @cached_property
    def arrows(self) -> tuple[Arrow, ...]:
        out = []
        v = self.start
        for k in self.kinds:
            a = apply_operation(v, k)
            out.append(a)
            v = a.end
        return tuple(out)

    @property
    def end(self) -> Permutation:
        return self.arrows[-1].end if self.kinds else self.start

    @property
    def is_trivial(self) -> bool:
        return not self.kinds

    def vertices(self) -> list[Permutation]:
        return [self.start] + [a.end for a in self.arrows]

    def __add__(self, other: "Path") -> "Path":
        if other.start != self.end:
            raise PermutationError("paths do not chain")
        return Path(self.start, self.kinds + other.kinds)

    def extend(self, kind: str) -> "Path":
        return Path(self.start, self.kinds + kind)

    def prefix(self, n: int) -> "Path":
        return Path(self.start, self.kinds[:n])

    def suffix_from(self, n: int) -> "Path":
        return Path(self.vertices()[n], self.kinds[n:])

    def text(self) -> str:
        return f"{self.start.text()} : {self.kinds}"

    def __str__(self) -> str:
        return self.text()


def parse_path(text: str, alphabet=None) -> Path:
    perm_s, sep, kinds = text.partition(":")
    if not sep:
        raise PermutationError(f"expected '<permutation> : <kinds>', got {text!r}")
    return Path(parse_permutation(perm_s, alphabet), kinds.strip())


def path_order(short: Path, long: Path) -> bool:
    """``short <= long`` in the prefix order."""
    if short.start != long.start:
        raise PermutationError("paths start at different vertices")
    return long.kinds.startswith(short.kinds)


@dataclass
class RauzyClass:
    """A Rauzy class with its diagram, vertices indexed in BFS order."""

    vertices: list[Permutation]
    succ: list[tuple[tuple[int, int, int], tuple[int, int, int]]]  # per kind: (end, winner, loser)
    index: dict[Permutation, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.vertices)

    def __contains__(self, pi: Permutation) -> bool:
        return pi in self.index

    @property
    def d(self) -> int:
        return self.vertices[0].d

    @property
    def alphabet(self) -> Alphabet:
        return self.vertices[0].alphabet

    def arrow(self, v: int, kind: str) -> Arrow:
        end, w, l = self.succ[v][KINDS.index(kind)]
        return Arrow(self.vertices[v], self.vertices[end], kind, w, l)

    def arrows(self) -> list[Arrow]:
        return [self.arrow(v, k) for v in range(len(self)) for k in KINDS]

    def walk(self, v: int, kinds: str) -> int:
        for k in kinds:
            v = self.succ[v][KINDS.index(k)][0]
        return v

    @cached_property
    def tables(self) -> dict[str, np.ndarray]:
        """Integer tables for compiled kernels: next vertex, winner, loser per kind."""
        n = len(self)
        nxt = np.zeros((n, 2), np.int64)
        win = np.zeros((n, 2), np.int64)
        los = np.zeros((n, 2), np.int64)
        for v, row in enumerate(self.succ):
            for k, (e, w, l) in enumerate(row):
                nxt[v, k], win[v, k], los[v, k] = e, w, l
        return {"next": nxt, "winner": win, "loser": los}

    def to_dot(self) -> str:
        lines = ["digraph rauzy {"]
        for i, p in enumerate(self.vertices):
            lines.append(f'  v{i} [label="{p.text()}"];')
        for v in range(len(self)):
            for k in KINDS:
                a = self.arrow(v, k)
                lines.append(f'  v{v} -> v{self.index[a.end]} [label="{a.label()}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def rauzy_class(pi: Permutation) -> RauzyClass:
    """Breadth-first closure of ``pi`` under both operations (top first)."""
    if not is_irreducible(pi):
        raise PermutationError(f"{pi} is reducible")
    index = {pi: 0}
    vertices = [pi]
    queue = deque([pi])
    while queue:
        p = queue.popleft()
        for kind in KINDS:
            t, b, _, _ = _operate(p, kind)
            q = Permutation(p.alphabet, t, b)
            if q not in index:
                index[q] = len(vertices)
                vertices.append(q)
                queue.append(q)
    succ = []
    for p in vertices:
        row = []
        for kind in KINDS:
            t, b, w, l = _operate(p, kind)
            row.append((index[Permutation(p.alphabet, t, b)], w, l))
        succ.append(tuple(row))
    return RauzyClass(vertices, succ, index)


class Visit(enum.Enum):
    DESCEND = 0
    EMIT = 1
    PRUNE = 2


def enumerate_paths(
    rc: RauzyClass,
    start: Permutation | Path,
    visitor: Callable,
    *,
    init=None,
    advance: Callable | None = None,
) -> Iterator:
    """Depth-first walk of the binary path tree below ``start``.

    ``visitor(path)`` (or ``visitor(path, state)`` when ``advance`` is given)
    returns a :class:`Visit`.  Emitted and pruned paths are never extended,
    so the emitted family is disjoint.  With ``advance(state, arrow)`` a
    per-path state is carried down the tree and ``(path, state)`` pairs are
    yielded instead of bare paths.
    """
    root = start if isinstance(start, Path) else Path(start)
    if root.start not in rc:
        raise PermutationError(f"{root.start} is not in the class")
    stateful = advance is not None
    stack = [(rc.walk(rc.index[root.start], root.kinds), root.kinds, init)]
    base = root.start
    while stack:
        v, kinds, state = stack.pop()
        path = Path(base, kinds)
        verdict = visitor(path, state) if stateful else visitor(path)
        if verdict is Visit.EMIT:
            yield (path, state) if stateful else path
            continue
        if verdict is Visit.PRUNE:
            continue
        # push bottom first so that top is explored first
        for k in (1, 0):
            e, w, l = rc.succ[v][k]
            nstate = advance(state, rc.arrow(v, KINDS[k])) if stateful else None
            stack.append((e, kinds + KINDS[k], nstate))


def paths_of_length(rc: RauzyClass, start: Permutation, n: int) -> list[Path]:
    return list(
        enumerate_paths(rc, start, lambda p: Visit.EMIT if len(p) == n else Visit.DESCEND)
    )

"""The linear action ``B_gamma`` and the objects built from it.

Orientation convention, used everywhere in the package: an arrow with winner
``w`` and loser ``l`` has ``B e_w = e_w + e_l``, so on weight vectors
``(B q)_l = q_l + q_w``.  Matrices are stored row-major with
``M[i][j] = <B e_j, e_i>``.  Length data and suspension data transform by the
inverse transpose, which for a single arrow is ``x_w -= x_l``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

from .cones import ConeError, ConeSpec, extreme_rays, positive_orthant
from .rauzy import KINDS, Arrow, Path, Permutation, PermutationError, RauzyClass, rauzy_class


@dataclass(frozen=True)
class CocycleMatrix:
    rows: tuple[tuple[int, ...], ...]

    @classmethod
    def identity(cls, d: int) -> "CocycleMatrix":
        return cls(tuple(tuple(int(i == j) for j in range(d)) for i in range(d)))

    @property
    def d(self) -> int:
        return len(self.rows)

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def __matmul__(self, other: "CocycleMatrix") -> "CocycleMatrix":
        cols = list(zip(*other.rows))
        return CocycleMatrix(tuple(tuple(sum(a * b for a, b in zip(r, c)) for c in cols) for r in self.rows))

    def T(self) -> "CocycleMatrix":
        return CocycleMatrix(tuple(zip(*self.rows)))

    def apply(self, q: Sequence) -> tuple:
        return tuple(sum(a * x for a, x in zip(r, q)) for r in self.rows)

    def apply_transpose(self, x: Sequence) -> tuple:
        """``B* x``."""
        return tuple(sum(self.rows[i][j] * x[i] for i in range(self.d)) for j in range(self.d))

    def det(self) -> int:
        return bareiss_det(self.rows)

    def min_entry(self) -> int:
        return min(min(r) for r in self.rows)

    def max_entry(self) -> int:
        return max(max(r) for r in self.rows)

    def to_json(self) -> list[list[str]]:
        return [[str(v) for v in r] for r in self.rows]

    @classmethod
    def from_json(cls, data) -> "CocycleMatrix":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(tuple(tuple(int(v) for v in r) for r in data))


def bareiss_det(rows: Sequence[Sequence[int]]) -> int:
    m = [list(r) for r in rows]
    n = len(m)
    sign, prev = 1, 1
    for k in range(n - 1):
        if m[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if m[i][k] != 0), None)
            if swap is None:
                return 0
            m[k], m[swap] = m[swap], m[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def arrow_matrix(a: Arrow) -> CocycleMatrix:
    d = a.start.d
    rows = [[int(i == j) for j in range(d)] for i in range(d)]
    rows[a.loser][a.winner] = 1
    return CocycleMatrix(tuple(map(tuple, rows)))


def path_matrix(g: Path) -> CocycleMatrix:
    """``B_{g1 g2} = B_{g2} B_{g1}``: each new arrow multiplies on the left,
    i.e. adds the winner row to the loser row."""
    rows = [[int(i == j) for j in range(g.start.d)] for i in range(g.start.d)]
    for a in g.arrows:
        rw, rl = rows[a.winner], rows[a.loser]
        rows[a.loser] = [x + y for x, y in zip(rl, rw)]
    return CocycleMatrix(tuple(map(tuple, rows)))


def act_weights(g: Path, q: Sequence) -> tuple:
    """``B_g q`` without forming the matrix."""
    q = list(q)
    for a in g.arrows:
        q[a.loser] += q[a.winner]
    return tuple(q)


def inverse_transpose_apply(g: Path, x: Sequence) -> tuple:
    """``(B*_g)^{-1} x``; used for both length and suspension data."""
    x = list(x)
    for a in g.arrows:
        x[a.winner] -= x[a.loser]
    return tuple(x)


def transpose_apply(g: Path, x: Sequence) -> tuple:
    """``B*_g x``."""
    x = list(x)
    for a in reversed(g.arrows):
        x[a.winner] += x[a.loser]
    return tuple(x)


def completeness(g: Path) -> int:
    """Number of factors in the greedy cut of ``g`` into minimal complete paths."""
    d = g.start.d
    k, seen = 0, set()
    for a in g.arrows:
        seen.add(a.winner)
        if len(seen) == d:
            k += 1
            seen = set()
    return k


def is_positive(g: Path) -> bool:
    return path_matrix(g).min_entry() >= 1


@dataclass(frozen=True)
class OmegaMatrix:
    """``rows[y][x] = <Omega e_x, e_y>``, so ``h = -Omega tau`` is a matrix product."""

    rows: tuple[tuple[int, ...], ...]

    def entry(self, x: int, y: int) -> int:
        return self.rows[y][x]

    def apply(self, v: Sequence) -> tuple:
        return tuple(sum(a * b for a, b in zip(r, v)) for r in self.rows)


@lru_cache(maxsize=None)
def omega_matrix(pi: Permutation) -> OmegaMatrix:
    d = pi.d
    pt, pb = pi.pos_top, pi.pos_bottom
    rows = [[0] * d for _ in range(d)]
    for x in range(d):
        for y in range(d):
            if pt[x] > pt[y] and pb[x] < pb[y]:
                rows[y][x] = 1
            elif pt[x] < pt[y] and pb[x] > pb[y]:
                rows[y][x] = -1
    return OmegaMatrix(tuple(map(tuple, rows)))


def height_vector(pi: Permutation, tau: Sequence) -> tuple:
    return tuple(-v for v in omega_matrix(pi).apply(tau))


@lru_cache(maxsize=None)
def theta_cone(pi: Permutation) -> ConeSpec:
    """Facets: top-prefix sums positive (k = 1..d-1), then bottom-prefix sums negative."""
    d = pi.d
    facets = []
    for k in range(1, d):
        facets.append([int(pi.pos_top[x] <= k) for x in range(d)])
    for k in range(1, d):
        facets.append([-int(pi.pos_bottom[x] <= k) for x in range(d)])
    witness = [pi.pos_bottom[x] - pi.pos_top[x] for x in range(d)]
    return ConeSpec.make(facets, witness)


@lru_cache(maxsize=None)
def theta_rays(pi: Permutation) -> tuple[tuple[int, ...], ...]:
    return tuple(extreme_rays(theta_cone(pi)))


def is_strongly_positive(g: Path) -> bool:
    if not is_positive(g):
        return False
    target = theta_cone(g.end)
    return all(target.interior(inverse_transpose_apply(g, r)) for r in theta_rays(g.start))


def has_border(g: Path) -> bool:
    """Whether some nontrivial proper prefix equals a suffix anchored at the same vertex."""
    n = len(g)
    verts = g.vertices()
    return any(g.kinds[:k] == g.kinds[n - k:] and verts[n - k] == g.start for k in range(1, n))


def is_neat(g: Path) -> bool:
    if g.start != g.end:
        raise PermutationError("a neat path must be a loop")
    return not g.is_trivial and not has_border(g) and is_strongly_positive(g)


def shortest_neat_loop(pi: Permutation, max_len: int = 24) -> Path:
    """Breadth-first by length, top before bottom; first neat loop found."""
    rc = rauzy_class(pi)
    start = rc.index[pi]
    frontier = [("", start)]
    for _ in range(max_len):
        nxt = []
        for kinds, v in frontier:
            for k, kind in enumerate(KINDS):
                e = rc.succ[v][k][0]
                nk = kinds + kind
                if e == start:
                    g = Path(pi, nk)
                    if is_neat(g):
                        return g
                nxt.append((nk, e))
        frontier = nxt
    raise PermutationError(f"no neat loop of length <= {max_len} at {pi}")


def hilbert_distance(cone: ConeSpec, x: Sequence, y: Sequence) -> float:
    """Birkhoff form: ``ln(max_i f_i(x)/f_i(y) * max_j f_j(y)/f_j(x))``."""
    fx, fy = cone.values(x), cone.values(y)
    if any(v <= 0 for v in fx) or any(v <= 0 for v in fy):
        raise ConeError("points must lie strictly inside the cone")
    if all(isinstance(v, (int, Fraction)) for v in fx + fy):
        fx, fy = [Fraction(v) for v in fx], [Fraction(v) for v in fy]
        val = max(a / b for a, b in zip(fx, fy)) * max(b / a for a, b in zip(fx, fy))
        return math.log(val.numerator) - math.log(val.denominator)
    val = max(a / b for a, b in zip(fx, fy)) * max(b / a for a, b in zip(fx, fy))
    return max(0.0, math.log(val))


def orthant_distance(x: Sequence, y: Sequence) -> float:
    """``ln max x_i y_j / (x_j y_i)`` on the positive orthant."""
    return hilbert_distance(positive_orthant(len(x)), x, y)


def lemma_search(rc: RauzyClass, max_len: int, k: int, *, strong: bool) -> dict:
    """Exhaust every path of length <= max_len from every vertex of ``rc`` and
    test ``k``-complete ones for positivity (or strong positivity).

    Matrices, completeness counters and transformed cone rays are carried
    incrementally down the path tree.  Returns counts, the counterexamples, and
    (for the strong search) any positive path that is not strongly positive.
    """
    d = rc.d
    examined = checked = 0
    failures: list[str] = []
    positive_not_strong: list[str] = []
    for v0 in range(len(rc)):
        pi = rc.vertices[v0]
        eye = tuple(tuple(int(i == j) for j in range(d)) for i in range(d))
        rays0 = tuple(theta_rays(pi)) if strong else ()
        stack = [(v0, "", eye, 0, frozenset(), rays0)]
        while stack:
            v, kinds, rows, kc, seen, rays = stack.pop()
            examined += 1
            if kc >= k and kinds:
                checked += 1
                pos = all(x >= 1 for r in rows for x in r)
                if strong:
                    cone = theta_cone(rc.vertices[v])
                    ok = pos and all(cone.interior(r) for r in rays)
                    if pos and not ok:
                        positive_not_strong.append(f"{pi.text()} : {kinds}")
                else:
                    ok = pos
                if not ok:
                    failures.append(f"{pi.text()} : {kinds}")
            if len(kinds) == max_len:
                continue
            for kk in (1, 0):
                e, w, l = rc.succ[v][kk]
                nrows = list(rows)
                nrows[l] = tuple(a + b for a, b in zip(rows[l], rows[w]))
                s = seen | {w}
                nk = kc
                if len(s) == d:
                    nk, s = kc + 1, frozenset()
                nrays = tuple(_elem_inv(r, w, l) for r in rays)
                stack.append((e, kinds + KINDS[kk], tuple(nrows), nk, s, nrays))
    return {
        "examined": examined,
        "checked": checked,
        "failures": failures,
        "positive_not_strongly_positive": positive_not_strong,
    }


def _elem_inv(r, w, l):
    r = list(r)
    r[w] -= r[l]
    return tuple(r)


def matrices_to_json(ms: Iterable[CocycleMatrix]) -> str:
    return json.dumps([m.to_json() for m in ms])

"""Pointed rational polyhedral cones given by linear facet functionals.

The closure ``{x : f(x) >= 0 for all facets f}`` is assumed pointed.  Extreme
rays are computed exactly with the double-description method; a brute-force
facet-subset search is provided for cross-checking.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from math import gcd, lcm
from typing import Sequence

MAX_DIM = 10


class ConeError(ValueError):
    pass


def _dot(f, x):
    return sum(a * b for a, b in zip(f, x))


def rank(rows: Sequence[Sequence]) -> int:
    """Exact rank by fraction-free Gaussian elimination."""
    m = [[Fraction(v) for v in r] for r in rows]
    if not m:
        return 0
    ncol = len(m[0])
    r = 0
    for c in range(ncol):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        for i in range(r + 1, len(m)):
            if m[i][c] != 0:
                k = m[i][c] / m[r][c]
                m[i] = [a - k * b for a, b in zip(m[i], m[r])]
        r += 1
        if r == len(m):
            break
    return r


def nullspace_vector(rows: Sequence[Sequence], n: int) -> tuple[Fraction, ...] | None:
    """A nonzero vector annihilated by ``rows`` when the kernel is a line."""
    m = [[Fraction(v) for v in r] for r in rows]
    pivots = []
    r = 0
    for c in range(n):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [a * inv for a in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                k = m[i][c]
                m[i] = [a - k * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
    free = [c for c in range(n) if c not in pivots]
    if len(free) != 1:
        return None
    x = [Fraction(0)] * n
    x[free[0]] = Fraction(1)
    for i, c in enumerate(pivots):
        x[c] = -m[i][free[0]]
    return tuple(x)


def primitive(v: Sequence) -> tuple[int, ...]:
    """Scale a rational vector to the primitive integer vector on its ray."""
    fr = [Fraction(x) for x in v]
    den = reduce(lcm, (x.denominator for x in fr), 1)
    ints = [int(x * den) for x in fr]
    g = reduce(gcd, (abs(x) for x in ints), 0)
    if g == 0:
        raise ConeError("zero vector has no ray")
    return tuple(x // g for x in ints)


@dataclass(frozen=True)
class ConeSpec:
    facets: tuple[tuple[Fraction, ...], ...]
    strict: tuple[bool, ...]
    witness: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.facets) != len(self.strict):
            raise ConeError("one strictness flag per facet")
        if not self.contains(self.witness):
            raise ConeError("stored witness is not interior")

    @classmethod
    def make(cls, facets, witness, strict=True) -> "ConeSpec":
        fs = tuple(tuple(Fraction(c) for c in f) for f in facets)
        flags = tuple(strict for _ in fs) if isinstance(strict, bool) else tuple(strict)
        return cls(fs, flags, tuple(Fraction(c) for c in witness))

    @property
    def dim(self) -> int:
        return len(self.witness)

    def values(self, x) -> list:
        return [_dot(f, x) for f in self.facets]

    def contains(self, x, closed: bool = False) -> bool:
        for v, s in zip(self.values(x), self.strict):
            if v < 0 or (v == 0 and s and not closed):
                return False
        return True

    def interior(self, x) -> bool:
        return all(v > 0 for v in self.values(x))

    def to_json(self) -> dict:
        return {
            "facets": [[_q(c) for c in f] for f in self.facets],
            "strict": list(self.strict),
            "witness": [_q(c) for c in self.witness],
        }


def _q(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def positive_orthant(d: int) -> ConeSpec:
    eye = [[int(i == j) for j in range(d)] for i in range(d)]
    return ConeSpec.make(eye, [1] * d)


def _check_pointed(cone: ConeSpec):
    if cone.dim > MAX_DIM:
        raise ConeError(f"dimension {cone.dim} exceeds cap {MAX_DIM}")
    if rank(cone.facets) < cone.dim:
        raise ConeError("cone is not pointed")


def extreme_rays(cone: ConeSpec) -> list[tuple[int, ...]]:
    """Extreme rays of the closure by double description, sorted."""
    _check_pointed(cone)
    n = cone.dim
    facets = [list(f) for f in cone.facets]
    # initial simplicial cone on n independent facets
    basis: list[int] = []
    for i, f in enumerate(facets):
        if rank([facets[j] for j in basis] + [f]) > len(basis):
            basis.append(i)
        if len(basis) == n:
            break
    rays = []
    for i in basis:
        others = [facets[j] for j in basis if j != i]
        v = nullspace_vector(others, n)
        if _dot(facets[i], v) < 0:
            v = tuple(-x for x in v)
        rays.append(primitive(v))
    added = list(basis)
    for i in range(len(facets)):
        if i in basis:
            continue
        a = facets[i]
        vals = [_dot(a, r) for r in rays]
        pos = [r for r, v in zip(rays, vals) if v > 0]
        zer = [r for r, v in zip(rays, vals) if v == 0]
        neg = [(r, v) for r, v in zip(rays, vals) if v < 0]
        new = pos + zer
        active = [facets[j] for j in added]
        for p in pos:
            ap = _dot(a, p)
            zp = {j for j, f in enumerate(active) if _dot(f, p) == 0}
            for q, aq in neg:
                common = [active[j] for j in zp if _dot(active[j], q) == 0]
                if len(common) < n - 2 or rank(common) < n - 2:
                    continue
                new.append(primitive([ap * y - aq * x for x, y in zip(p, q)]))
        rays = list(dict.fromkeys(new))
        added.append(i)
    return sorted(rays)


def extreme_rays_bruteforce(cone: ConeSpec) -> list[tuple[int, ...]]:
    """Oracle: intersect every (n-1)-subset of facets and keep feasible lines."""
    _check_pointed(cone)
    n = cone.dim
    found = set()
    for sub in itertools.combinations(cone.facets, n - 1):
        v = nullspace_vector(sub, n)
        if v is None:
            continue
        for s in (1, -1):
            w = tuple(s * x for x in v)
            if all(_dot(f, w) >= 0 for f in cone.facets):
                found.add(primitive(w))
    return sorted(found)

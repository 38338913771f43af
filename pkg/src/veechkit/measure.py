"""Exact path measures and decorated-class combinatorics.

``P_q(gamma | pi) = N(q) / N(B_gamma q)`` where ``N`` is the product of the
coordinates.  Families of paths are enumerated with emit-and-stop semantics so
they are disjoint by construction, and every sum is an exact rational.

Two engines are available for :func:`family_measure`:

``tree``
    depth-first walk of the path tree; supports path-dependent events, depth
    and mass cutoffs.  Mass below a cutoff is reported as ``unresolved``.
``memo``
    memoized recursion over ``(vertex, B q)`` states; requires events that
    depend only on ``B q`` and terminate on every branch.  Distinct paths
    often reach the same state, which collapses the tree by orders of
    magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .cocycle import act_weights, path_matrix
from .rauzy import (
    KINDS,
    Alphabet,
    Arrow,
    Path,
    Permutation,
    PermutationError,
    RauzyClass,
    apply_operation,
    is_irreducible,
    rauzy_class,
)


def _prod(v) -> int:
    p = 1
    for x in v:
        p *= x
    return p


def as_weights(q: Iterable) -> tuple:
    out = tuple(x if isinstance(x, int) else Fraction(x) for x in q)
    if any(x <= 0 for x in out):
        raise ValueError("weights must be strictly positive")
    return out


def integral_weights(q: Sequence) -> tuple[tuple[int, ...], int]:
    """Clear denominators: returns integer ``q'`` and the scale ``c`` with
    ``q' = c q``.  Every measure here is invariant under this scaling."""
    q = as_weights(q)
    den = math.lcm(*(Fraction(x).denominator for x in q))
    return tuple(int(x * den) for x in q), den


def weight_stats(q: Sequence, subset: Iterable[int] | None = None):
    """``(N, M, m)`` over the letters in ``subset`` (all letters when omitted)."""
    q = as_weights(q)
    idx = range(len(q)) if subset is None else sorted(subset)
    vals = [q[i] for i in idx]
    if not vals:
        raise ValueError("empty letter subset")
    return _prod(vals), max(vals), min(vals)


def leb_lambda_q(q: Sequence) -> Fraction:
    """Lebesgue measure of ``{lambda > 0 : <lambda, q> < 1}``."""
    q = as_weights(q)
    return Fraction(1, math.factorial(len(q))) / Fraction(_prod(q))


def cylinder_measure(g: Path, q: Sequence) -> Fraction:
    q = as_weights(q)
    return Fraction(_prod(q)) / Fraction(_prod(act_weights(g, q)))


# -- engine ------------------------------------------------------------------


@dataclass(frozen=True)
class EventSpec:
    """Minimal-path event.

    ``emit`` decides satisfaction; ``prune`` (optional) cuts a branch that can
    no longer produce a satisfying path; ``allow`` (optional) filters arrows.
    With ``on_state=True`` the callbacks receive only ``B q`` (a tuple), which
    is what the memo engine needs; otherwise they receive ``(path, Bq)``.
    """

    emit: Callable
    prune: Callable | None = None
    allow: Callable[[Arrow], bool] | None = None
    on_state: bool = False
    monotone: bool = True
    name: str = "event"


@dataclass(frozen=True)
class Budget:
    max_depth: int | None = None
    mass_cutoff: Fraction | None = None
    max_nodes: int | None = None


@dataclass
class MeasureResult:
    measure: Fraction
    unresolved: Fraction
    nodes: int
    emitted: int
    truncated: bool = False
    paths: list = field(default_factory=list)

    @property
    def exhausted(self) -> bool:
        """True when the whole relevant tree was explored, so ``measure`` is exact."""
        return self.unresolved == 0 and not self.truncated

    @property
    def upper(self) -> Fraction:
        return self.measure + self.unresolved


def family_measure(
    start: Permutation,
    q: Sequence,
    event: EventSpec,
    budget: Budget = Budget(),
    *,
    engine: str = "tree",
    collect: bool = False,
    rc: RauzyClass | None = None,
) -> MeasureResult:
    q, _ = integral_weights(q)
    rc = rc or rauzy_class(start)
    if engine == "memo":
        if not event.on_state:
            raise ValueError("the memo engine needs a state-only event")
        if budget.max_depth is not None:
            raise ValueError("the memo engine does not support depth cutoffs")
        return _memo_engine(rc, rc.index[start], q, event, budget)
    if engine != "tree":
        raise ValueError(f"unknown engine {engine!r}")
    return _tree_engine(rc, start, q, event, budget, collect)


def _tree_engine(rc, start, q, event, budget, collect) -> MeasureResult:
    nq = _prod(q)
    cutoff = Fraction(budget.mass_cutoff) if budget.mass_cutoff is not None else None
    acc = _FractionSum()
    unresolved = _FractionSum()
    emitted = nodes = 0
    paths = []
    truncated = False
    allow = event.allow
    stack = [(rc.index[start], "", q)]
    while stack:
        v, kinds, w = stack.pop()
        nodes += 1
        if budget.max_nodes is not None and nodes > budget.max_nodes:
            truncated = True
            unresolved.add(nq, _prod(w))
            for v2, k2, w2 in stack:
                unresolved.add(nq, _prod(w2))
            break
        if event.on_state:
            hit = event.emit(w)
            cut = event.prune(w) if event.prune else False
        else:
            p = Path(start, kinds)
            cut = event.prune(p, w) if event.prune else False
            hit = (not cut) and event.emit(p, w)
        if cut:
            continue
        if hit:
            emitted += 1
            acc.add(nq, _prod(w))
            if collect:
                paths.append(Path(start, kinds))
            continue
        if (budget.max_depth is not None and len(kinds) >= budget.max_depth) or (
            cutoff is not None and Fraction(nq, _prod(w)) < cutoff
        ):
            unresolved.add(nq, _prod(w))
            continue
        for k in (1, 0):
            e, win, los = rc.succ[v][k]
            if allow is not None and not allow(rc.arrow(v, KINDS[k])):
                continue
            nw = list(w)
            nw[los] += nw[win]
            stack.append((e, kinds + KINDS[k], tuple(nw)))
    return MeasureResult(acc.value(), unresolved.value(), nodes, emitted, truncated, paths)


class _FractionSum:
    """Exact sum of ``a / b`` terms, grouped by denominator to keep the
    expensive rational reductions rare."""

    def __init__(self):
        self.by_den: dict[int, int] = {}

    def add(self, a: int, b: int):
        self.by_den[b] = self.by_den.get(b, 0) + a

    def value(self) -> Fraction:
        total = Fraction(0)
        items = sorted(self.by_den.items())
        # pairwise reduction keeps intermediate denominators balanced
        fr = [Fraction(a, b) for b, a in items]
        while len(fr) > 1:
            fr = [fr[i] + fr[i + 1] if i + 1 < len(fr) else fr[i] for i in range(0, len(fr), 2)]
        return fr[0] if fr else total


def _memo_engine(rc, v0, q, event, budget) -> MeasureResult:
    """Iterative post-order evaluation of
    ``F(v, w) = [emit] or sum_k w_l / (w_l + w_w) * F(v_k, w_k)``.

    The node mass ``N(q) / N(w)`` depends on the state only, so a mass cutoff
    is compatible with memoization: ``F`` carries a pair (emitted, unresolved)
    of conditional masses.
    """
    succ = rc.succ
    allow = event.allow
    allowed = [
        [k for k in (0, 1) if allow is None or allow(rc.arrow(v, KINDS[k]))] for v in range(len(rc))
    ]
    memo: dict = {}
    emit, prune = event.emit, event.prune
    ZERO, ONE = Fraction(0), Fraction(1)
    cutoff = Fraction(budget.mass_cutoff) if budget.mass_cutoff is not None else None
    nq = _prod(q)
    emitted = 0

    def leaf(w):
        if prune is not None and prune(w):
            return (ZERO, ZERO)
        if emit(w):
            return (ONE, ZERO)
        if cutoff is not None and Fraction(nq, _prod(w)) < cutoff:
            return (ZERO, ONE)
        return None

    root = (v0, q)
    stack = [root]
    nodes = 0
    while stack:
        key = stack[-1]
        if key in memo:
            stack.pop()
            continue
        v, w = key
        val = leaf(w)
        if val is not None:
            memo[key] = val
            nodes += 1
            emitted += val[0] == ONE
            stack.pop()
            continue
        children = []
        pending = False
        for k in allowed[v]:
            e, win, los = succ[v][k]
            nw = list(w)
            nw[los] += nw[win]
            ck = (e, tuple(nw))
            children.append((ck, Fraction(w[los], w[los] + w[win])))
            if ck not in memo:
                stack.append(ck)
                pending = True
        if pending:
            if budget.max_nodes is not None and len(memo) > budget.max_nodes:
                raise MemoryError("memo engine exceeded its state budget")
            continue
        stack.pop()
        nodes += 1
        em = un = ZERO
        for ck, p in children:
            ce, cu = memo[ck]
            if ce:
                em += p * ce
            if cu:
                un += p * cu
        memo[key] = (em, un)
    em, un = memo[root]
    return MeasureResult(em, un, nodes, emitted)


# -- verification harnesses --------------------------------------------------


@dataclass
class BoundCheck:
    """Outcome of a bound verification.

    ``measure`` is an exact lower bound (exact value when ``exhausted``);
    ``upper`` is a rigorous upper bound.  ``method`` is ``exact`` when both
    bounds are rationals and ``certified`` when the upper bound came from the
    float kernel with its rounding margin.
    """

    measure: Fraction
    bound: Fraction
    passed: bool
    exhausted: bool
    unresolved: Fraction
    nodes: int
    paths: list = field(default_factory=list)
    upper: object = None
    method: str = "exact"
    cutoff: object = None

    def __post_init__(self):
        if self.upper is None:
            self.upper = self.measure + self.unresolved


def kerckhoff_event(q: Sequence, alpha: int, T) -> EventSpec:
    q, _ = integral_weights(q)
    target = Fraction(T) * q[alpha]
    return EventSpec(
        emit=lambda w: w[alpha] > target,
        allow=lambda a: a.winner != alpha,
        on_state=True,
        name="kerckhoff",
    )


CUTOFF_SCHEDULE = (Fraction(1, 100), Fraction(1, 1000))
CERTIFIED_SCHEDULE = (1e-5, 1e-6, 1e-7, 1e-8, 1e-9)


def kerckhoff_measure(
    start: Permutation,
    q: Sequence,
    alpha: int,
    T,
    *,
    cutoffs: Sequence = CUTOFF_SCHEDULE,
    certified_cutoffs: Sequence = CERTIFIED_SCHEDULE,
    max_nodes: int | None = 2_000_000,
    collect: bool = False,
) -> BoundCheck:
    """Measure of minimal paths with no winner ``alpha`` and
    ``(B q)_alpha > T q_alpha``.

    Infinite winner-avoiding branches exist, so mass below a cutoff stays
    unresolved and ``passed`` requires ``measure + unresolved < 1/T``.  The
    exact rational search runs first over ``cutoffs``; when it cannot decide,
    the compiled kernel continues over ``certified_cutoffs`` with rigorous
    float bounds.
    """
    T = Fraction(T)
    if T <= 1:
        raise ValueError("T must exceed 1")
    bound = 1 / T
    qi, _ = integral_weights(q)
    ev = kerckhoff_event(qi, alpha, T)
    rc = rauzy_class(start)
    res = None
    for c in cutoffs:
        res = family_measure(
            start, qi, ev, Budget(mass_cutoff=c, max_nodes=max_nodes),
            collect=collect, rc=rc, engine="tree" if collect else "memo",
        )
        if res.upper < bound or res.measure >= bound or res.truncated:
            return BoundCheck(res.measure, bound, res.upper < bound, res.exhausted, res.unresolved,
                              res.nodes, res.paths, cutoff=c)
    from .kernels import certified_restricted_measure

    out = BoundCheck(res.measure, bound, False, res.exhausted, res.unresolved, res.nodes, res.paths,
                     cutoff=cutoffs[-1] if cutoffs else None)
    for c in certified_cutoffs:
        lo, up, nodes, _ = certified_restricted_measure(rc, rc.index[start], qi, alpha, T, c)
        out = BoundCheck(res.measure, bound, up < bound, False, Fraction(0), nodes, res.paths,
                         upper=up, method="certified", cutoff=c)
        if up < bound or lo >= bound:
            break
    return out


def distortion_event(q: Sequence, subset: Iterable[int], M: int, m: int) -> EventSpec:
    """Growth event with a ceiling on the subset maximum.  Branches where the
    subset maximum already reached its ceiling are pruned; this is exact
    because coordinates never decrease.
    With ``m == 0`` the ceiling is dropped and only the growth condition remains."""
    q, _ = integral_weights(q)
    sub = tuple(sorted(subset))
    Mq = max(q)
    grow = (2**M) * Mq
    ceil = (2 ** (M - m)) * Mq
    prune = None if m == 0 else (lambda w: max(w[i] for i in sub) >= ceil)
    return EventSpec(emit=lambda w: max(w) > grow, prune=prune, on_state=True, monotone=False, name="distortion")


def distortion_measure(
    start: Permutation,
    q: Sequence,
    subset: Iterable[int],
    M: int,
    m: int,
    *,
    engine: str = "memo",
    budget: Budget = Budget(),
) -> MeasureResult:
    sub = frozenset(subset)
    if not sub or len(sub) >= start.d:
        raise ValueError("subset must be non-empty and proper")
    if not 0 <= m <= M:
        raise ValueError("need 0 <= m <= M")
    return family_measure(start, q, distortion_event(q, sub, M, m), budget, engine=engine)


def simple_distortion_check(
    start: Permutation, q: Sequence, C, *, cutoffs: Sequence = tuple(Fraction(1, 10**k) for k in range(2, 6)), max_nodes: int | None = 2_000_000
) -> BoundCheck:
    """Minimal paths with ``M(B q) < C min(m(B q), M(q))``; passes when the
    (lower-bound) measure already exceeds ``1/C``."""
    C = Fraction(C)
    if C <= 1:
        raise ValueError("C must exceed 1")
    qi, _ = integral_weights(q)
    Mq = max(qi)
    ev = EventSpec(emit=lambda w: max(w) < C * min(min(w), Mq), on_state=True, monotone=False, name="simple")
    rc = rauzy_class(start)
    res = None
    for c in cutoffs or (None,):
        res = family_measure(start, qi, ev, Budget(mass_cutoff=c, max_nodes=max_nodes), rc=rc, engine="memo")
        if res.measure > 1 / C or res.exhausted or res.truncated:
            break
    return BoundCheck(res.measure, 1 / C, res.measure > 1 / C, res.exhausted, res.unresolved, res.nodes)


def fit_power_envelope(ms: Sequence[int], values: Sequence[float], theta_min: float | None = None) -> tuple[float, float]:
    """Fit ``value ~ C (m+1)^theta``: theta by least squares in log-log
    (clipped below at ``theta_min`` when given, which is the constrained
    least-squares optimum in one variable), then ``C`` as the smallest
    constant dominating every fit point."""
    xs = [math.log(m + 1) for m in ms]
    ys = [math.log(float(v)) for v in values]
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two points")
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    theta = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx
    if theta_min is not None:
        theta = max(theta, theta_min)
    C = max(float(v) / (m + 1) ** theta for m, v in zip(ms, values))
    return C, theta


# -- decorated classes -------------------------------------------------------

TRIVIAL, INTERMEDIATE, ESSENTIAL = "trivial", "intermediate", "essential"


def vertex_type(pi: Permutation, subset: frozenset[int]) -> str:
    n = (pi.top[-1] in subset) + (pi.bottom[-1] in subset)
    return (TRIVIAL, INTERMEDIATE, ESSENTIAL)[n]


@dataclass
class ArrowFlags:
    colored: bool
    separated: bool  # winner and loser both outside the complement
    complement: bool  # winner and loser both outside the subset


@dataclass
class PathFlags:
    arrows: list[ArrowFlags]
    colored: bool
    complement_separated: bool
    preferring: bool
    block_triangular: bool


def classify_arrows(g: Path, subset: Iterable[int]) -> PathFlags:
    sub = frozenset(subset)
    d = g.start.d
    if not sub or len(sub) >= d:
        raise ValueError("subset must be non-empty and proper")
    flags = [
        ArrowFlags(a.winner in sub, a.winner in sub and a.loser in sub, a.winner not in sub and a.loser not in sub)
        for a in g.arrows
    ]
    B = path_matrix(g)
    # <B e_alpha, e_beta> = 0 for alpha outside, beta inside the subset
    tri = all(B[b, a] == 0 for a in range(d) if a not in sub for b in sub)
    return PathFlags(
        flags,
        all(f.colored for f in flags),
        all(f.separated for f in flags),
        all(a.loser not in sub for a in g.arrows),
        tri,
    )


@dataclass
class DecoratedClass:
    base: RauzyClass
    subset: frozenset[int]
    members: list[Permutation]
    types: dict[Permutation, str]
    _arcs: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> str:
        ts = set(self.types.values())
        if TRIVIAL in ts:
            return TRIVIAL
        return ESSENTIAL if ESSENTIAL in ts else INTERMEDIATE

    @property
    def essential_members(self) -> list[Permutation]:
        return [p for p in self.members if self.types[p] == ESSENTIAL]

    def colored_arrows(self, pi: Permutation) -> list[Arrow]:
        out = []
        for k in KINDS:
            a = apply_operation(pi, k)
            if a.winner in self.subset:
                out.append(a)
        return out

    def arc(self, pi: Permutation, kind: str) -> Path:
        """The arc of the given type starting at an essential member (cached)."""
        key = (pi, kind)
        if key not in self._arcs:
            if self.types.get(pi) != ESSENTIAL:
                raise PermutationError(f"{pi} is not essential")
            kinds = kind
            cur = apply_operation(pi, kind).end
            while self.types[cur] != ESSENTIAL:
                (a,) = self.colored_arrows(cur)
                kinds += a.kind
                cur = a.end
            self._arcs[key] = Path(pi, kinds)
        return self._arcs[key]

    def arcs(self) -> list[Path]:
        return [self.arc(p, k) for p in self.essential_members for k in KINDS]

    def ess(self, pi: Permutation) -> Permutation:
        cur = pi
        seen = set()
        while self.types[cur] != ESSENTIAL:
            if self.types[cur] == TRIVIAL or cur in seen:
                raise PermutationError("no essential element reachable")
            seen.add(cur)
            (a,) = self.colored_arrows(cur)
            cur = a.end
        return cur

    def ess_path(self, g: Path) -> Path:
        """Concatenation of the completions of the arrows of ``g`` that start at
        essential members; the other arrows contribute trivial paths."""
        self._check_colored(g)
        start = self.ess(g.start)
        kinds = ""
        for a in g.arrows:
            if self.types[a.start] == ESSENTIAL:
                kinds += self.arc(a.start, a.kind).kinds
        return Path(start, kinds)

    def _check_colored(self, g: Path):
        if g.start not in self.types:
            raise PermutationError("path does not start in the decorated class")
        if any(a.winner not in self.subset for a in g.arrows):
            raise PermutationError("path is not colored")


def decorate(rc: RauzyClass, pi: Permutation, subset: Iterable[int]) -> DecoratedClass:
    sub = frozenset(subset)
    if not sub or len(sub) >= rc.d:
        raise ValueError("subset must be non-empty and proper")
    if pi not in rc:
        raise PermutationError(f"{pi} is not in the class")
    if vertex_type(pi, sub) == TRIVIAL:
        return DecoratedClass(rc, sub, [pi], {pi: TRIVIAL})
    # colored arrows: forward and backward adjacency (weak connectivity)
    adj: dict[int, set[int]] = {}
    for v in range(len(rc)):
        for k in (0, 1):
            e, w, l = rc.succ[v][k]
            if w in sub:
                adj.setdefault(v, set()).add(e)
                adj.setdefault(e, set()).add(v)
    seen = {rc.index[pi]}
    order = [rc.index[pi]]
    i = 0
    while i < len(order):
        for u in sorted(adj.get(order[i], ())):
            if u not in seen:
                seen.add(u)
                order.append(u)
        i += 1
    members = [rc.vertices[v] for v in order]
    return DecoratedClass(rc, sub, members, {p: vertex_type(p, sub) for p in members})


def admissible_end(top: Sequence[int], bottom: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Drop the longest common-letter-set prefix of both rows."""
    if top[-1] == bottom[-1]:
        raise PermutationError("rows must end with different letters")
    cut = 0
    st, sb = set(), set()
    for k in range(len(top) - 1):
        st.add(top[k])
        sb.add(bottom[k])
        if st == sb:
            cut = k + 1
    return tuple(top[cut:]), tuple(bottom[cut:])


def _reduced_perm(pi: Permutation, subset: frozenset[int]) -> Permutation:
    top = [x for x in pi.top if x in subset]
    bottom = [x for x in pi.bottom if x in subset]
    t, b = admissible_end(top, bottom)
    letters = sorted(set(t))
    alpha = Alphabet(tuple(pi.alphabet.letters[x] for x in letters))
    ren = {x: i for i, x in enumerate(letters)}
    return Permutation(alpha, tuple(ren[x] for x in t), tuple(ren[x] for x in b))


def reduce_permutation(dc: DecoratedClass, pi: Permutation) -> Permutation:
    if dc.kind != ESSENTIAL:
        raise PermutationError("reduction needs an essential decorated class")
    return _reduced_perm(dc.ess(pi), dc.subset)


def reduce_path(dc: DecoratedClass, g: Path) -> Path:
    """Arc-by-arc reduction of ``g^ess``: each arc becomes one arrow of the same
    type; the winner and first loser carry over."""
    if dc.kind != ESSENTIAL:
        raise PermutationError("reduction needs an essential decorated class")
    ge = dc.ess_path(g)
    start = _reduced_perm(ge.start, dc.subset)
    kinds = ""
    cur = ge.start
    i = 0
    arrows = ge.arrows
    while i < len(arrows):
        arc = dc.arc(cur, arrows[i].kind)
        kinds += arc.kinds[0]
        i += len(arc)
        cur = arc.end
    red = Path(start, kinds)
    _check_reduced_arrows(dc, ge, red)
    return red


def _check_reduced_arrows(dc, ge: Path, red: Path):
    cur, i = ge.start, 0
    for ra in red.arrows:
        arc = dc.arc(cur, ge.kinds[i])
        first = arc.arrows[0]
        names = ra.start.alphabet.letters
        if (
            names[ra.winner] != cur.name(first.winner)
            or names[ra.loser] != cur.name(first.loser)
        ):
            raise AssertionError("reduced arrow does not match its arc")
        i += len(arc)
        cur = arc.end


def reduced_weights(red_start: Permutation, base: Permutation, q: Sequence) -> tuple:
    """Projection of ``q`` on the reduced alphabet."""
    idx = [base.alphabet.index(x) for x in red_start.alphabet.letters]
    return tuple(q[i] for i in idx)


def drift(pi: Permutation, subset: Iterable[int]) -> tuple[int, int, int]:
    sub = frozenset(subset)
    tpos = [k + 1 for k, x in enumerate(pi.top) if x not in sub]
    bpos = [k + 1 for k, x in enumerate(pi.bottom) if x not in sub]
    if not tpos or not bpos:
        raise ValueError("the complement of the subset must meet both rows")
    return tpos[-1], bpos[-1], tpos[-1] + bpos[-1]


def is_drifting(a: Arrow, subset: Iterable[int]) -> bool:
    return drift(a.end, subset)[2] == drift(a.start, subset)[2] + 1


def random_colored_path(dc: DecoratedClass, start: Permutation, length: int, rng) -> Path:
    kinds = ""
    cur = start
    for _ in range(length):
        opts = dc.colored_arrows(cur)
        if not opts:
            break
        a = opts[rng.randrange(len(opts))]
        kinds += a.kind
        cur = a.end
    return Path(start, kinds)

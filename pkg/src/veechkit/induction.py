"""Interval exchanges, Rauzy induction, zippered rectangles, the Veech flow and
the return map to a precompact section.

Two numeric policies are supported.  ``exact`` keeps every coordinate as a
:class:`fractions.Fraction` (or int) and never renormalizes; ``f64`` uses
floats, renormalizes ``lambda`` to unit sum after every step, rescales
``tau`` by the same factor so the area is unchanged, and adds the log of the
normalization to ``logscale``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator, Sequence

from .cocycle import (
    act_weights,
    height_vector,
    inverse_transpose_apply,
    is_neat,
    shortest_neat_loop,
    theta_cone,
    transpose_apply,
)
from .rauzy import TOP, BOTTOM, Arrow, Path, Permutation, apply_operation, is_irreducible, parse_permutation

EXACT = "exact"
F64 = "f64"
POLICIES = (EXACT, F64)
DEFAULT_RETURN_CAP = 100_000


class TieError(ArithmeticError):
    """Rauzy induction is undefined when the two last intervals have equal length."""


class SectionError(RuntimeError):
    pass


def _coerce(v, policy: str):
    if policy == EXACT:
        return tuple(x if isinstance(x, (int, Fraction)) else Fraction(x) for x in v)
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class IetState:
    lengths: tuple
    perm: Permutation

    def __post_init__(self):
        if len(self.lengths) != self.perm.d:
            raise ValueError("one length per letter")
        if any(x <= 0 for x in self.lengths):
            raise ValueError("lengths must be positive")
        if not is_irreducible(self.perm):
            raise ValueError(f"{self.perm} is reducible")

    @property
    def total(self):
        return sum(self.lengths)


@dataclass(frozen=True)
class ZipperedState:
    lengths: tuple
    perm: Permutation
    tau: tuple
    logscale: float = 0.0

    def __post_init__(self):
        if any(x <= 0 for x in self.lengths):
            raise ValueError("lengths must be positive")
        if not theta_cone(self.perm).interior(self.tau):
            raise ValueError("tau must lie strictly inside the suspension cone")

    @property
    def iet(self) -> IetState:
        return IetState(self.lengths, self.perm)

    def to_json(self) -> dict:
        return {
            "lambda": [_num(x) for x in self.lengths],
            "perm": self.perm.text(),
            "tau": [_num(x) for x in self.tau],
            "logscale": self.logscale,
        }

    @classmethod
    def from_json(cls, data: dict, policy: str = EXACT) -> "ZipperedState":
        perm = parse_permutation(data["perm"])
        conv = (lambda s: Fraction(s)) if policy == EXACT else float
        return cls(
            tuple(conv(x) for x in data["lambda"]),
            perm,
            tuple(conv(x) for x in data["tau"]),
            float(data.get("logscale", 0.0)),
        )


def _num(x):
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def iet_evaluate(s: IetState, x):
    """Image of ``x`` under the interval exchange: ``I_alpha`` is translated
    from its place in top order to its place in bottom order."""
    if not 0 <= x < s.total:
        raise ValueError(f"x={x} outside [0, {s.total})")
    lam = s.lengths
    left = 0
    for a in s.perm.top:
        if x < left + lam[a]:
            break
        left += lam[a]
    target = sum(lam[b] for b in s.perm.bottom[: s.perm.pos_bottom[a] - 1])
    return x - left + target


def _select(perm: Permutation, lam) -> str:
    alpha, beta = perm.top[-1], perm.bottom[-1]
    if lam[alpha] > lam[beta]:
        return TOP
    if lam[alpha] < lam[beta]:
        return BOTTOM
    raise TieError(f"lambda_{perm.name(alpha)} == lambda_{perm.name(beta)}")


def rauzy_step(s: IetState) -> tuple[IetState, Arrow]:
    arrow = apply_operation(s.perm, _select(s.perm, s.lengths))
    lam = list(s.lengths)
    lam[arrow.winner] -= lam[arrow.loser]
    return IetState(tuple(lam), arrow.end), arrow


@dataclass
class Trace:
    steps: list = field(default_factory=list)  # (Arrow, state)
    tie: bool = False
    logscale: float = 0.0

    @property
    def kinds(self) -> str:
        return "".join(a.kind for a, _ in self.steps)

    def __len__(self):
        return len(self.steps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if not self.steps:
            w.writerow(["step", "kind", "winner", "loser", "logscale"])
            return buf.getvalue()
        st0 = self.steps[0][1]
        letters = st0.perm.alphabet.letters
        has_tau = isinstance(st0, ZipperedState)
        header = ["step", "kind", "winner", "loser", "logscale"] + [f"lambda_{x}" for x in letters]
        if has_tau:
            header += [f"tau_{x}" for x in letters]
        w.writerow(header)
        for i, (a, st) in enumerate(self.steps, 1):
            row = [i, a.kind, letters[a.winner], letters[a.loser], repr(float(getattr(st, "logscale", 0.0)))]
            row += [_num(x) for x in st.lengths]
            if has_tau:
                row += [_num(x) for x in st.tau]
            w.writerow(row)
        return buf.getvalue()


def rauzy_orbit(s: IetState, n: int, policy: str = EXACT) -> Trace:
    """Up to ``n`` Rauzy steps; a tie truncates the trace and sets ``tie``."""
    tr = Trace()
    cur = IetState(_coerce(s.lengths, policy), s.perm)
    for _ in range(n):
        try:
            cur, a = rauzy_step(cur)
        except TieError:
            tr.tie = True
            break
        if policy == F64:
            tot = sum(cur.lengths)
            tr.logscale -= math.log(tot)
            cur = IetState(tuple(x / tot for x in cur.lengths), cur.perm)
        tr.steps.append((a, cur))
    return tr


def zippered_step(z: ZipperedState) -> tuple[ZipperedState, Arrow]:
    _, a = rauzy_step(z.iet)
    lam, tau = list(z.lengths), list(z.tau)
    lam[a.winner] -= lam[a.loser]
    tau[a.winner] -= tau[a.loser]
    return ZipperedState(tuple(lam), a.end, tuple(tau), z.logscale), a


def area(z) -> object:
    return sum(l * h for l, h in zip(z.lengths, height_vector(z.perm, z.tau)))


def renormalize(z: ZipperedState) -> ZipperedState:
    """Scale ``lambda`` to unit sum and ``tau`` inversely (float policy)."""
    tot = sum(z.lengths)
    return ZipperedState(
        tuple(x / tot for x in z.lengths), z.perm, tuple(x * tot for x in z.tau), z.logscale - math.log(tot)
    )


def zippered_orbit(z: ZipperedState, n: int, policy: str = EXACT) -> Trace:
    tr = Trace()
    cur = replace(z, lengths=_coerce(z.lengths, policy), tau=_coerce(z.tau, policy))
    for _ in range(n):
        try:
            cur, a = zippered_step(cur)
        except TieError:
            tr.tie = True
            break
        if policy == F64:
            cur = renormalize(cur)
        tr.steps.append((a, cur))
    tr.logscale = cur.logscale
    return tr


def _phi_after_step(lam, perm) -> object:
    alpha, beta = perm.top[-1], perm.bottom[-1]
    return sum(lam) - min(lam[alpha], lam[beta])


def in_fundamental_domain(z: ZipperedState) -> bool:
    """``phi(Q z) < 1 <= phi(z)`` with ``phi`` the total length."""
    return _phi_after_step(z.lengths, z.perm) < 1 <= sum(z.lengths)


def veech_flow(z: ZipperedState, t=None, *, factor=None, check_domain: bool = True) -> tuple[ZipperedState, int]:
    """Flow for time ``t`` (or by the exact scale ``factor = e^t``) and return to
    the fundamental domain.  Returns the new state and the number of induction
    steps applied."""
    if (t is None) == (factor is None):
        raise ValueError("give exactly one of t or factor")
    if check_domain and not in_fundamental_domain(z):
        raise ValueError("state is not in the fundamental domain")
    if factor is None:
        if t < 0:
            raise ValueError("t must be non-negative")
        factor = math.exp(t)
        log_t = float(t)
    else:
        if factor < 1:
            raise ValueError("factor must be >= 1")
        log_t = math.log(factor)
    cur = ZipperedState(
        tuple(x * factor for x in z.lengths), z.perm, tuple(x / factor for x in z.tau), z.logscale + log_t
    )
    steps = 0
    while _phi_after_step(cur.lengths, cur.perm) >= 1:
        cur, _ = zippered_step(cur)
        steps += 1
    return cur, steps


# -- precompact section ------------------------------------------------------


@dataclass(frozen=True)
class SectionSpec:
    loop: Path

    def __post_init__(self):
        if not is_neat(self.loop):
            raise SectionError(f"{self.loop} is not a neat loop")

    @classmethod
    def default(cls, pi: Permutation, max_len: int = 24) -> "SectionSpec":
        return cls(shortest_neat_loop(pi, max_len))

    @property
    def perm(self) -> Permutation:
        return self.loop.start

    @property
    def kinds(self) -> str:
        return self.loop.kinds


def section_membership(z: ZipperedState, sec: SectionSpec, tol: float = 1e-9) -> bool:
    tot = sum(z.lengths)
    exact = all(isinstance(x, (int, Fraction)) for x in z.lengths + z.tau)
    if (tot != 1) if exact else abs(tot - 1) > tol:
        raise ValueError("lengths must be normalized to unit sum")
    if z.perm != sec.perm:
        return False
    if any(x <= 0 for x in inverse_transpose_apply(sec.loop, z.lengths)):
        return False
    if not theta_cone(sec.perm).interior(transpose_apply(sec.loop, z.tau)):
        return False
    A = area(z)
    return A == 1 if exact else abs(A - 1) <= tol


@dataclass(frozen=True)
class SectionReturn:
    state: ZipperedState
    r: float
    word: Path
    steps: int


def section_return(z: ZipperedState, sec: SectionSpec, cap: int = DEFAULT_RETURN_CAP) -> SectionReturn:
    """First return of a section point.

    The return happens after ``n`` steps, ``n`` minimal with the orbit word
    ending at ``n`` with the loop (anchored at the loop vertex) and continuing
    with the loop.  Exact states keep exact coordinates; ``r`` is always a float.
    """
    g = sec.kinds
    L = len(g)
    exact = all(isinstance(x, (int, Fraction)) for x in z.lengths + z.tau)
    lam, tau, perm = list(z.lengths), list(z.tau), z.perm
    logacc = 0.0
    kinds: list[str] = []
    verts: list[Permutation] = [perm]
    cand = None  # (n, lam, tau, logacc)
    for n in range(cap + 1):
        if cand is not None and n == cand[0] + L:
            if "".join(kinds[cand[0]:n]) == g:
                m, lam_n, tau_n, acc = cand
                tot = sum(lam_n)
                r = acc - _log(tot)
                new = ZipperedState(
                    tuple(x / tot for x in lam_n), sec.perm, tuple(x * tot for x in tau_n), z.logscale + r
                )
                return SectionReturn(new, r, Path(z.perm, "".join(kinds[:m])), m)
            cand = None
        if n >= L and verts[n - L] == sec.perm and "".join(kinds[n - L:n]) == g:
            cand = (n, tuple(lam), tuple(tau), logacc)
        if n == L and "".join(kinds) != g:
            raise SectionError("state is not in the section (orbit does not begin with the loop)")
        if n == cap:
            break
        kind = _select(perm, lam)
        a = apply_operation(perm, kind)
        lam[a.winner] -= lam[a.loser]
        tau[a.winner] -= tau[a.loser]
        perm = a.end
        kinds.append(kind)
        verts.append(perm)
        if not exact:
            tot = sum(lam)
            lam = [x / tot for x in lam]
            tau = [x * tot for x in tau]
            logacc -= math.log(tot)
    raise SectionError(f"no return within {cap} steps")


def section_point(sec: SectionSpec, x: Sequence, sigma: Sequence | None = None) -> ZipperedState:
    """The section point with ``lambda`` proportional to ``B*_loop x`` (x > 0)
    and ``tau`` proportional to ``(B*_loop)^{-1} sigma`` (sigma in the cone at
    the loop vertex, defaulting to the interior witness), scaled to area 1."""
    lam = transpose_apply(sec.loop, x)
    tot = sum(lam)
    lam = tuple(v / tot for v in lam)
    if sigma is None:
        sigma = theta_cone(sec.perm).witness
    tau = inverse_transpose_apply(sec.loop, sigma)
    A = sum(l * h for l, h in zip(lam, height_vector(sec.perm, tau)))
    exact = all(isinstance(v, (int, Fraction)) for v in tuple(lam) + tuple(tau))
    tau = tuple(v / A for v in tau) if exact else tuple(v / float(A) for v in tau)
    return ZipperedState(lam, sec.perm, tau)


def return_branches(sec: SectionSpec, mass_cutoff, q: Sequence | None = None, max_nodes: int = 2_000_000):
    """Enumerate return words by exact path measure.

    Each branch ``w`` carries the conditional mass ``P_q(w loop) / P_q(loop)``
    of the set of section points returning along ``w``.  Nodes whose conditional
    mass falls below ``mass_cutoff`` are discarded; returns
    ``(branches, discarded_mass)`` with both exact and summing to one.
    """
    pi = sec.perm
    d = pi.d
    q = tuple(q) if q is not None else (1,) * d
    g = sec.kinds
    L = len(g)
    cutoff = Fraction(mass_cutoff)

    def prod(v):
        p = 1
        for x in v:
            p *= x
        return p

    n0 = prod(q)
    base_w = act_weights(sec.loop, q)
    base = Fraction(n0, prod(base_w))
    branches: list[tuple[Path, Fraction]] = []
    discarded = Fraction(0)
    # node: (kinds, perm, weights, loop suffix still to avoid, mass already emitted below)
    stack = [(g, sec.loop.end, base_w, None, Fraction(0))]
    nodes = 0
    while stack:
        kinds, perm, w, forbid, owed = stack.pop()
        nodes += 1
        if nodes > max_nodes:
            raise SectionError("node budget exhausted")
        mass = Fraction(n0, prod(w)) / base
        if forbid is None and perm == pi and kinds.endswith(g) and _anchored(pi, kinds, len(kinds) - L):
            owed = Fraction(n0, prod(act_weights(Path(pi, g), w))) / base
            if owed >= cutoff:
                branches.append((Path(pi, kinds), owed))
            else:
                discarded += owed
            forbid = g
        if mass < cutoff:
            discarded += mass - owed
            continue
        for kind in (BOTTOM, TOP):
            a = apply_operation(perm, kind)
            nw = list(w)
            nw[a.loser] += nw[a.winner]
            nf, no = None, Fraction(0)
            if forbid is not None and kind == forbid[0]:
                nf, no = forbid[1:], owed
                if not nf:
                    continue
            stack.append((kinds + kind, a.end, tuple(nw), nf, no))
    return branches, discarded


def _log(x) -> float:
    if isinstance(x, Fraction):
        return math.log(x.numerator) - math.log(x.denominator)
    return math.log(x)


def _anchored(pi: Permutation, kinds: str, k: int) -> bool:
    return Path(pi, kinds[:k]).end == pi


def sample_section(sec: SectionSpec, rng, n: int):
    """Rejection sampler: ``lambda`` uniform on the simplex restricted to the
    loop cylinder, ``tau`` uniform in ``[-1,1]^d`` restricted to the backward
    cone, scaled to area one.  Returns float arrays ``(lam, tau)``."""
    import numpy as np

    d = sec.perm.d
    lam_out = np.empty((n, d))
    tau_out = np.empty((n, d))
    cone = theta_cone(sec.perm)
    F = np.array([[float(c) for c in f] for f in cone.facets])
    arrows = sec.loop.arrows
    got = 0
    while got < n:
        m = max(64, 4 * (n - got))
        lam = rng.dirichlet(np.ones(d), size=m)
        x = lam.copy()
        for a in arrows:
            x[:, a.winner] -= x[:, a.loser]
        lam = lam[(x > 0).all(axis=1)]
        s = rng.uniform(-1.0, 1.0, size=(len(lam) * 8 + 64, d))
        y = s.copy()
        for a in reversed(arrows):
            y[:, a.winner] += y[:, a.loser]
        s = s[((y @ F.T) > 0).all(axis=1)]
        k = min(len(lam), len(s), n - got)
        lam_out[got:got + k] = lam[:k]
        tau_out[got:got + k] = s[:k]
        got += k
    Om = np.array(_omega_rows(sec.perm), dtype=float)
    h = -(tau_out @ Om.T)
    A = (lam_out * h).sum(axis=1)
    tau_out /= A[:, None]
    return lam_out, tau_out


def _omega_rows(pi):
    from .cocycle import omega_matrix

    return omega_matrix(pi).rows


def trace_to_json(tr: Trace) -> str:
    return json.dumps(
        {
            "tie": tr.tie,
            "steps": [
                {"kind": a.kind, "winner": a.start.name(a.winner), "loser": a.start.name(a.loser),
                 "state": st.to_json() if isinstance(st, ZipperedState) else {"lambda": [_num(x) for x in st.lengths], "perm": st.perm.text()}}
                for a, st in tr.steps
            ],
        }
    )

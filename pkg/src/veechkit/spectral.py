"""Expanding Markov maps of the interval, their weighted transfer operators
``L_s u(x) = sum_l exp(-s r(h_l x)) J(h_l x) u(h_l x)`` on a uniform grid, and
suspension semiflows over them.

A spec lists inverse branches ``h_l : [0,1] -> image_l``.  Jacobian weights
are ``|h_l'|`` (Lebesgue transfer operator) or a constant; roofs are given as
``r o h_l``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .cocycle import orthant_distance, transpose_apply
from .induction import SectionSpec, return_branches

DEFAULT_N = 4096
TWO_PI = 2.0 * math.pi


class SpecError(ValueError):
    pass


class BoundaryError(ArithmeticError):
    """An orbit landed exactly on a branch boundary."""


# -- specs ---------------------------------------------------------------------


@dataclass(frozen=True)
class InverseMap:
    kind: str  # affine | moebius | table
    params: dict

    def __post_init__(self):
        if self.kind not in ("affine", "moebius", "table"):
            raise SpecError(f"unknown inverse map kind {self.kind!r}")
        if self.kind == "table":
            xs = np.asarray(self.params["x"], float)
            if xs[0] != 0 or xs[-1] != 1 or np.any(np.diff(xs) <= 0):
                raise SpecError("table abscissae must increase from 0 to 1")

    def __call__(self, x):
        p = self.params
        if self.kind == "affine":
            return p["slope"] * np.asarray(x, float) + p["shift"]
        if self.kind == "moebius":
            x = np.asarray(x, float)
            return (p["a"] * x + p["b"]) / (p["c"] * x + p["d"])
        return np.interp(x, p["x"], p["y"])

    def deriv(self, x):
        p = self.params
        x = np.asarray(x, float)
        if self.kind == "affine":
            return np.full_like(x, float(p["slope"]))
        if self.kind == "moebius":
            return (p["a"] * p["d"] - p["b"] * p["c"]) / (p["c"] * x + p["d"]) ** 2
        xs, ys = np.asarray(p["x"], float), np.asarray(p["y"], float)
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        return (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])

    def inverse(self, y):
        """The forward map ``T`` on this branch's image."""
        p = self.params
        y = np.asarray(y, float)
        if self.kind == "affine":
            return (y - p["shift"]) / p["slope"]
        if self.kind == "moebius":
            return (p["d"] * y - p["b"]) / (p["a"] - p["c"] * y)
        xs, ys = np.asarray(p["x"], float), np.asarray(p["y"], float)
        if ys[-1] < ys[0]:
            xs, ys = xs[::-1], ys[::-1]
        return np.interp(y, ys, xs)


@dataclass(frozen=True)
class Branch:
    image: tuple[float, float]
    inverse: InverseMap
    jacobian: dict = field(default_factory=lambda: {"kind": "derivative"})
    roof: dict = field(default_factory=lambda: {"kind": "constant", "value": math.log(2)})

    def h(self, x):
        return self.inverse(x)

    def J(self, x):
        """``J o h`` at branch coordinates ``x``."""
        kind = self.jacobian.get("kind")
        if kind == "derivative":
            return np.abs(self.inverse.deriv(x))
        if kind == "constant":
            return np.full_like(np.asarray(x, float), float(self.jacobian["value"]))
        raise SpecError(f"unknown jacobian kind {kind!r}")

    def r(self, x):
        """``r o h`` at branch coordinates ``x``."""
        p = self.roof
        kind = p.get("kind")
        x = np.asarray(x, float)
        if kind == "constant":
            return np.full_like(x, float(p["value"]))
        if kind == "sine":
            y = self.h(x)
            return p["base"] + p["amp"] * np.sin(TWO_PI * (p.get("freq", 1.0) * y + p.get("phase", 0.0)))
        if kind == "log_affine":
            return np.log(p["a"] * x + p["b"])
        raise SpecError(f"unknown roof kind {kind!r}")

    def to_json(self) -> dict:
        return {
            "image_interval": list(self.image),
            "inverse_map": {"kind": self.inverse.kind, "params": self.inverse.params},
            "jacobian": self.jacobian,
            "roof": self.roof,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Branch":
        inv = d["inverse_map"]
        return cls(
            tuple(float(v) for v in d["image_interval"]),
            InverseMap(inv["kind"], dict(inv["params"])),
            dict(d.get("jacobian", {"kind": "derivative"})),
            dict(d.get("roof", {"kind": "constant", "value": math.log(2)})),
        )


@dataclass(frozen=True)
class MarkovMapSpec:
    branches: tuple[Branch, ...]
    sigma0: float | None = None  # admissible half-plane Re s > -sigma0 (None: any s)
    name: str = ""
    discarded: float = 0.0  # measure outside the listed branches (truncated specs)

    def __post_init__(self):
        if not self.branches:
            raise SpecError("a spec needs at least one branch")

    def __len__(self):
        return len(self.branches)

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    @cached_property
    def _order(self):
        lo = np.array([b.image[0] for b in self.branches])
        order = np.argsort(lo, kind="stable")
        return order, lo[order]

    def branch_of(self, y: float) -> int:
        order, lo = self._order
        k = int(np.searchsorted(lo, y, side="right")) - 1
        if k < 0:
            raise SpecError(f"{y} lies outside every branch image")
        l = int(order[k])
        b = self.branches[l]
        if not b.image[0] <= y <= b.image[1]:
            raise SpecError(f"{y} lies outside every branch image")
        return l

    def forward(self, y: float) -> tuple[float, int]:
        """``(T y, branch index)``; raises on an exact branch boundary."""
        l = self.branch_of(y)
        b = self.branches[l]
        if y == b.image[0] and y != 0.0:
            raise BoundaryError(f"orbit hit the branch boundary {y}")
        x = float(b.inverse.inverse(y))
        return min(max(x, 0.0), 1.0), l

    def roof_at(self, y: float) -> float:
        x, l = self.forward(y)
        return float(self.branches[l].r(x))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "sigma0": self.sigma0,
            "discarded": self.discarded,
            "branches": [b.to_json() for b in self.branches],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, data) -> "MarkovMapSpec":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(
            tuple(Branch.from_json(b) for b in data["branches"]),
            data.get("sigma0"),
            data.get("name", ""),
            float(data.get("discarded", 0.0)),
        )

    @classmethod
    def load(cls, path) -> "MarkovMapSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def doubling_spec(roof: str = "constant", amp: float = 0.3, base: float = math.log(2), freq: float = 1.0) -> MarkovMapSpec:
    """``x -> 2x mod 1`` with a constant roof or ``base + amp sin(2 pi freq y)``."""
    if roof == "constant":
        r = {"kind": "constant", "value": base}
    elif roof == "sine":
        r = {"kind": "sine", "base": base, "amp": amp, "freq": freq, "phase": 0.0}
    else:
        raise SpecError(f"unknown doubling roof {roof!r}")
    branches = tuple(
        Branch((k / 2, (k + 1) / 2), InverseMap("affine", {"slope": 0.5, "shift": k / 2}), {"kind": "derivative"}, r)
        for k in range(2)
    )
    return MarkovMapSpec(branches, None, f"doubling-{roof}")


# -- validation ----------------------------------------------------------------


@dataclass
class ValidationReport:
    passed: bool
    kappa: float
    distortion: float
    coverage: float
    overlap: float
    roof_floor: float
    roof_lipschitz: float
    tail_sum: float
    failures: list[str]

    def to_json(self) -> dict:
        return dict(self.__dict__)


def validate_spec(spec: MarkovMapSpec, sigma0: float = 0.0, samples: int = 2049, tol: float = 1e-9) -> ValidationReport:
    """Check expansion, log-Jacobian distortion, the image partition, the roof
    floor and roof derivative, and the weighted tail sum at ``sigma0``."""
    sigma0 = 0.0 if sigma0 is None else sigma0
    x = np.linspace(0.0, 1.0, samples)
    dx = x[1] - x[0]
    kappa = math.inf
    dist = rlip = 0.0
    floor = math.inf
    tail = 0.0
    images = []
    failures = []
    for i, b in enumerate(spec.branches):
        hp = np.abs(b.inverse.deriv(x))
        kappa = min(kappa, 1.0 / float(hp.max()))
        lj = np.log(b.J(x))
        dist = max(dist, float(np.abs(np.gradient(lj, dx)).max()))
        r = b.r(x)
        floor = min(floor, float(r.min()))
        rlip = max(rlip, float(np.abs(np.gradient(r, dx)).max()))
        tail += float(b.J(x).max()) * math.exp(sigma0 * float(r.max()))
        ends = sorted((float(b.h(0.0)), float(b.h(1.0))))
        if abs(ends[0] - b.image[0]) > tol or abs(ends[1] - b.image[1]) > tol:
            failures.append(f"branch {i}: h([0,1]) = {ends} differs from the declared image {list(b.image)}")
        images.append(ends)
    images.sort()
    coverage = sum(hi - lo for lo, hi in images)
    overlap = sum(max(0.0, images[k][1] - images[k + 1][0]) for k in range(len(images) - 1))
    if kappa <= 1.0:
        failures.append(f"expansion constant {kappa} <= 1")
    if overlap > tol:
        failures.append(f"branch images overlap by {overlap}")
    if abs(coverage + spec.discarded - 1.0) > max(tol, 1e-6):
        failures.append(f"branch images cover {coverage} (+ discarded {spec.discarded}) != 1")
    if floor <= 0:
        failures.append(f"roof floor {floor} <= 0")
    if not math.isfinite(tail):
        failures.append("weighted tail sum diverges")
    if not math.isfinite(dist):
        failures.append("log-Jacobian derivative unbounded")
    return ValidationReport(not failures, kappa, dist, coverage, overlap, floor, rlip, tail, failures)


# -- grid functions ------------------------------------------------------------


@dataclass
class GridFunction:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1 or self.values.size < 16:
            raise SpecError("grid functions need at least 16 points")
        if not np.all(np.isfinite(self.values)):
            raise SpecError("grid values must be finite")

    @classmethod
    def from_callable(cls, f, N: int = DEFAULT_N) -> "GridFunction":
        return cls(np.asarray(f(grid(N)), dtype=complex if _is_complex(f, N) else float))

    @classmethod
    def constant(cls, c, N: int = DEFAULT_N) -> "GridFunction":
        return cls(np.full(N, c))

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return grid(self.N)

    def integral(self):
        return integrate(self.values)

    def l2(self) -> float:
        return math.sqrt(float(integrate(np.abs(self.values) ** 2)))

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def derivative(self) -> np.ndarray:
        return np.gradient(self.values, 1.0 / (self.N - 1), edge_order=2)

    def __call__(self, x):
        return _interp(self.values, x)


def _is_complex(f, N):
    return np.iscomplexobj(f(np.zeros(1)))


def grid(N: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, N)


def integrate(v: np.ndarray):
    """Trapezoid rule with the first Euler-Maclaurin end correction
    (one-sided second-order derivative estimates)."""
    v = np.asarray(v)
    N = v.size
    h = 1.0 / (N - 1)
    s = h * (v.sum() - 0.5 * (v[0] + v[-1]))
    d0 = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
    d1 = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    return s - h * h / 12.0 * (d1 - d0)


def _interp(values: np.ndarray, x):
    """Monotone cubic (PCHIP) interpolation of grid values; complex values are
    interpolated part by part."""
    xs = grid(values.size)
    if np.iscomplexobj(values):
        return PchipInterpolator(xs, values.real)(x) + 1j * PchipInterpolator(xs, values.imag)(x)
    return PchipInterpolator(xs, values)(x)


def norm_1t(u: GridFunction, t: float) -> float:
    return u.sup() + float(np.abs(u.derivative()).max()) / max(1.0, abs(t))


# -- transfer operators ------------------------------------------------------


class _Pullback:
    """Per-grid cache of ``h_l(x)``, ``J o h_l`` and ``r o h_l``."""

    _cache: dict = {}

    def __init__(self, spec: MarkovMapSpec, N: int):
        x = grid(N)
        self.h = [np.clip(b.h(x), 0.0, 1.0) for b in spec.branches]
        self.J = [b.J(x) for b in spec.branches]
        self.r = [b.r(x) for b in spec.branches]

    @classmethod
    def get(cls, spec: MarkovMapSpec, N: int) -> "_Pullback":
        key = (id(spec), N)
        hit = cls._cache.get(key)
        if hit is None or hit[0] is not spec:
            hit = (spec, cls(spec, N))
            cls._cache[key] = hit
        return hit[1]


def transfer_apply(spec: MarkovMapSpec, s: complex, u: GridFunction) -> GridFunction:
    if spec.sigma0 is not None and complex(s).real <= -spec.sigma0:
        raise SpecError(f"Re(s) = {complex(s).real} outside the admissible half-plane Re(s) > {-spec.sigma0}")
    pb = _Pullback.get(spec, u.N)
    xs = grid(u.N)
    vals = u.values
    parts = [PchipInterpolator(xs, vals.real)] + ([PchipInterpolator(xs, vals.imag)] if np.iscomplexobj(vals) else [])
    s = complex(s)
    out = np.zeros(u.N, dtype=complex if (s.imag != 0 or len(parts) == 2) else float)
    for h, J, r in zip(pb.h, pb.J, pb.r):
        uh = parts[0](h) + (1j * parts[1](h) if len(parts) == 2 else 0.0)
        w = J * (np.exp(-s.real * r) if s.imag == 0 else np.exp(-s * r))
        out += w * uh
    return GridFunction(out)


@dataclass
class EigenResult:
    eigenvalue: float
    f: GridFunction
    iterations: int
    gap: float


def leading_eigen(spec: MarkovMapSpec, sigma: float, N: int = DEFAULT_N, tol: float = 1e-10, max_iter: int = 5000) -> EigenResult:
    """Power iteration on ``L_sigma`` normalized by ``int f = 1``."""
    f = GridFunction.constant(1.0, N)
    lam = 1.0
    for k in range(1, max_iter + 1):
        g = transfer_apply(spec, sigma, f)
        lam = float(g.integral() / f.integral())
        g = GridFunction(g.values / g.integral())
        gap = float(np.abs(g.values - f.values).max())
        f = g
        if gap < tol:
            if f.values.min() <= 0:
                raise SpecError("leading eigenfunction is not positive")
            return EigenResult(lam, f, k, gap)
    raise SpecError(f"power iteration did not converge in {max_iter} steps (gap {gap})")


@dataclass
class DolgopyatResult:
    s: complex
    norms: list[float]
    beta: float
    r2: float
    u_norm_1t: float

    def to_json(self) -> dict:
        return {
            "s": [self.s.real, self.s.imag],
            "norms": self.norms,
            "beta": self.beta,
            "r2": self.r2,
            "u_norm_1t": self.u_norm_1t,
        }


def dolgopyat_probe(spec: MarkovMapSpec, s: complex, k_max: int, u: GridFunction) -> DolgopyatResult:
    """``||L_s^k u||_{L^2}`` for ``k = 0..k_max`` with a geometric fit over the
    tail half."""
    s = complex(s)
    norms = [u.l2()]
    v = u
    for _ in range(k_max):
        v = transfer_apply(spec, s, v)
        norms.append(v.l2())
    ks = np.arange(k_max // 2, k_max + 1)
    logs = np.log(np.maximum(np.array(norms)[ks], 1e-300))
    slope, icpt, r2 = linear_fit(ks, logs)
    return DolgopyatResult(s, norms, math.exp(slope), r2, norm_1t(u, s.imag))


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line; returns ``(slope, intercept, R^2)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * x + icpt)
    tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - float((res**2).sum() / tot) if tot > 0 else 1.0
    return float(slope), float(icpt), r2


# -- suspension semiflow -------------------------------------------------------


@dataclass(frozen=True)
class SuspensionState:
    x: float
    a: float

    def check(self, spec: MarkovMapSpec):
        r = spec.roof_at(self.x)
        if not 0.0 <= self.a < r:
            raise SpecError(f"height {self.a} outside [0, {r})")


def suspension_evolve(spec: MarkovMapSpec, z: SuspensionState, t: float) -> tuple[SuspensionState, int]:
    """``T_t(x, a)`` and the number ``Psi_t`` of roofs crossed."""
    if t < 0:
        raise SpecError("the semiflow runs forward only")
    z.check(spec)
    x, h, n = z.x, z.a + t, 0
    r = spec.roof_at(x)
    while h >= r:
        h -= r
        x, _ = spec.forward(x)
        n += 1
        r = spec.roof_at(x)
    return SuspensionState(x, h), n


def kernel_arrays(spec: MarkovMapSpec):
    """Arrays for the compiled suspension kernels; affine branches only."""
    order = np.argsort([b.image[0] for b in spec.branches], kind="stable")
    lo, slope, shift, rk, rp = [], [], [], [], []
    for i in order:
        b = spec.branches[i]
        if b.inverse.kind != "affine":
            raise SpecError("the compiled kernels support affine branches only")
        lo.append(b.image[0])
        slope.append(b.inverse.params["slope"])
        shift.append(b.inverse.params["shift"])
        p = b.roof
        if p["kind"] == "constant":
            rk.append(0)
            rp.append([p["value"], 0.0, 0.0, 0.0])
        elif p["kind"] == "sine":
            rk.append(1)
            rp.append([p["base"], p["amp"], p.get("freq", 1.0), p.get("phase", 0.0)])
        else:
            rk.append(2)
            rp.append([p["a"], p["b"], 0.0, 0.0])
    return (
        np.array(lo, float),
        np.array(slope, float),
        np.array(shift, float),
        np.array(rk, np.int64),
        np.array(rp, float),
    )


def is_lebesgue_invariant(spec: MarkovMapSpec, tol: float = 1e-12) -> bool:
    """Full affine branches with Lebesgue Jacobian preserve Lebesgue measure."""
    try:
        kernel_arrays(spec)
    except SpecError:
        return False
    tot = sum(abs(b.inverse.params["slope"]) for b in spec.branches)
    return abs(tot - 1.0) < tol and all(b.jacobian.get("kind") == "derivative" for b in spec.branches)


# -- Rauzy-induced spec ------------------------------------------------------


@dataclass
class RauzyChart:
    """Affine chart ``[0,1] -> Delta_loop``: ``x -> P0 + x (P1 - P0)``."""

    P0: tuple[Fraction, ...]
    P1: tuple[Fraction, ...]

    @classmethod
    def for_section(cls, sec: SectionSpec) -> "RauzyChart":
        if sec.perm.d != 2:
            raise SpecError("the built-in chart covers d = 2 only")
        ends = []
        for e in ((1, 0), (0, 1)):
            v = transpose_apply(sec.loop, e)
            tot = sum(v)
            ends.append(tuple(Fraction(c, tot) for c in v))
        ends.sort()
        return cls(ends[0], ends[1])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)[..., None]
        p0 = np.array([float(c) for c in self.P0])
        p1 = np.array([float(c) for c in self.P1])
        return p0 + x * (p1 - p0)

    def coordinate(self, lam) -> np.ndarray:
        lam = np.asarray(lam, float)
        return (lam[..., 0] / lam.sum(axis=-1) - float(self.P0[0])) / float(self.P1[0] - self.P0[0])


def rauzy_induced_spec(sec: SectionSpec, cutoff, max_nodes: int = 2_000_000):
    """Truncated section map of the Veech flow as a Markov map spec.

    Returns ``(spec, branches, discarded)`` where ``branches`` pairs each
    return word with its exact conditional mass.  Branch ``w`` has
    ``h_w(x) = chart^{-1}(B*_w chart(x) / |.|)`` (a Moebius map) and roof
    ``ln |B*_w chart(x)|`` (log-affine in ``x``).
    """
    chart = RauzyChart.for_section(sec)
    branches, discarded = return_branches(sec, cutoff, max_nodes=max_nodes)
    if len(branches) < 2:
        raise SpecError(f"cutoff {cutoff} leaves {len(branches)} branch(es)")
    P0, P1 = chart.P0, chart.P1
    delta = P1[0] - P0[0]
    out = []
    for w, _mass in branches:
        u = transpose_apply(w, P0)
        v = tuple(b - a for a, b in zip(u, transpose_apply(w, P1)))
        Su, Sv = sum(u), sum(v)
        a = v[0] - P0[0] * Sv
        b = u[0] - P0[0] * Su
        c = delta * Sv
        d = delta * Su
        inv = InverseMap("moebius", {"a": float(a), "b": float(b), "c": float(c), "d": float(d)})
        y0 = Fraction(b, d)
        y1 = Fraction(a + b, c + d)
        lo, hi = sorted((y0, y1))
        roof = {"kind": "log_affine", "a": float(Sv), "b": float(Su)}
        out.append(Branch((float(lo), float(hi)), inv, {"kind": "derivative"}, roof))
    spec = MarkovMapSpec(tuple(out), 0.0, f"rauzy-{sec.perm.text()}-{sec.kinds}", float(discarded))
    return spec, branches, discarded


def branch_contraction(sec: SectionSpec, word, rng, pairs: int) -> float:
    """Largest sampled ratio ``d(B* x, B* y) / d(x, y)`` for the orthant Hilbert
    metric over pairs in the loop cylinder."""
    chart = RauzyChart.for_section(sec)
    worst = 0.0
    for _ in range(pairs):
        xs = chart(rng.random(2))
        p, q = xs[0], xs[1]
        d0 = orthant_distance(tuple(p), tuple(q))
        if d0 == 0:
            continue
        d1 = orthant_distance(transpose_apply(word, p), transpose_apply(word, q))
        worst = max(worst, d1 / d0)
    return worst

"""Monte-Carlo experiments: tails of the section roof, return counts and
correlations of suspension semiflows, and sampled dynamics invariants.

Every experiment splits its samples over ``streams`` independent Philox
generators spawned from one seed; stream ``i`` always receives the same
samples, so results depend only on ``(seed, samples, streams)`` and not on the
number of threads.  Error bars come from the delete-one-stream jackknife.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .cocycle import omega_matrix, theta_cone
from .induction import SectionSpec, sample_section
from .rauzy import rauzy_class
from .spectral import MarkovMapSpec, SpecError, is_lebesgue_invariant, kernel_arrays, linear_fit

DEFAULT_STREAMS = 16
JITTER = 2.0**-50
OBSERVABLES = {"const": 0, "bump": 1, "cos": 2, "height": 3}


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("VEECHKIT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Provenance:
    seed: int
    samples: int
    streams: int
    generator: str = "Philox"

    def to_json(self) -> dict:
        return {"seed": self.seed, "samples": self.samples, "streams": self.streams, "generator": self.generator}


def stream_generators(seed: int, streams: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(streams)]


def stream_sizes(samples: int, streams: int) -> list[int]:
    q, r = divmod(samples, streams)
    return [q + (i < r) for i in range(streams)]


def stream_offsets(samples: int, streams: int) -> list[int]:
    sizes = stream_sizes(samples, streams)
    return [sum(sizes[:i]) for i in range(streams)]


def run_streams(task, seed: int, samples: int, streams: int, threads: int | None = None) -> list:
    """``task(i, rng, n, offset)`` for every stream, results in stream order."""
    gens = stream_generators(seed, streams)
    sizes = stream_sizes(samples, streams)
    offs = stream_offsets(samples, streams)
    args = list(zip(range(streams), gens, sizes, offs))
    threads = threads or default_threads()
    if threads == 1:
        return [task(*a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: task(*a), args))


def jackknife(stat, parts: list) -> tuple[float, float]:
    """Estimate and standard error of ``stat(sum of parts)`` by deleting one part at a time."""
    total = sum(parts[1:], parts[0])
    full = stat(total)
    k = len(parts)
    if k < 2:
        return full, math.nan
    loo = np.array([stat(total - p) for p in parts])
    se = np.sqrt((k - 1) / k * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return full, (float(se) if np.ndim(se) == 0 else se)


@dataclass
class RateFit:
    rate: float
    stderr: float
    ci: tuple[float, float]
    r2: float
    t_range: tuple[float, float]

    @property
    def excludes_zero(self) -> bool:
        return self.ci[0] > 0 or self.ci[1] < 0

    def to_json(self) -> dict:
        return {"rate": self.rate, "stderr": self.stderr, "ci95": list(self.ci), "r2": self.r2, "t_range": list(self.t_range)}


def _rate_fit(t, stat, parts, mask) -> RateFit:
    """Fit ``log stat ~ -rate t`` on ``mask`` with a jackknife CI over streams."""
    tt = np.asarray(t)[mask]

    def rate(part):
        v = stat(part)[mask]
        return -linear_fit(tt, np.log(np.abs(v)))[0]

    est, se = jackknife(rate, parts)
    r2 = linear_fit(tt, np.log(np.abs(stat(sum(parts[1:], parts[0]))[mask])))[2]
    return RateFit(est, se, (est - 1.96 * se, est + 1.96 * se), r2, (float(tt[0]), float(tt[-1])))


# -- section roof tails --------------------------------------------------------


@dataclass
class TailResult:
    provenance: Provenance
    gamma_star: str
    survival: list[tuple[float, float, float, int]]  # (T, S(T), stderr, n)
    slope: float
    intercept: float
    r2: float
    fit_range: tuple[float, float]
    min_r: float
    censored: int
    ties: int
    psi: list[tuple[float, float, float, int]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            **self.provenance.to_json(),
            "gamma_star": self.gamma_star,
            "min_r": self.min_r,
            "censored": self.censored,
            "ties": self.ties,
            "fit": {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "range": list(self.fit_range)},
            "survival": [list(r) for r in self.survival],
            "psi_integral": [list(r) for r in self.psi],
        }

    def csv(self) -> str:
        rows = ["T,value,stderr,n"] + [f"{T!r},{v!r},{e!r},{n}" for T, v, e, n in self.survival]
        return "\n".join(rows) + "\n"


def _section_tables(sec: SectionSpec):
    rc = rauzy_class(sec.perm)
    tab = rc.tables
    loop = np.array([0 if k == "t" else 1 for k in sec.kinds], np.int64)
    return rc, tab, loop, rc.index[sec.perm]


def section_returns(sec: SectionSpec, samples: int, seed: int, streams: int = DEFAULT_STREAMS, threads=None, cap: int = 100_000, returns: int = 1):
    """Sample section points and follow ``returns`` consecutive returns.

    Returns per-stream tuples ``(r[n, returns], status[n, returns], lam, tau, lam_out, tau_out)``.
    """
    rc, tab, loop, v0 = _section_tables(sec)

    def task(i, rng, n, off):
        lam, tau = sample_section(sec, rng, n)
        l, t = lam, tau
        rs = np.full((n, returns), np.nan)
        st = np.zeros((n, returns), np.int64)
        for k in range(returns):
            r, _, status, l2, t2 = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, l, t, cap)
            rs[:, k] = r
            st[:, k] = status
            bad = status != 0
            # stopped samples keep their last state; later returns are marked censored
            l = np.where(bad[:, None], l, l2)
            t = np.where(bad[:, None], t, t2)
            if k + 1 < returns:
                st[bad, k + 1:] = 2
                rs[bad, k + 1:] = np.inf
        return rs, st, lam, tau, l, t

    return run_streams(task, seed, samples, streams, threads)


def tail_estimate(
    sec: SectionSpec,
    samples: int,
    seed: int,
    *,
    streams: int = DEFAULT_STREAMS,
    threads=None,
    bin_width: float = 0.25,
    T_max: float | None = None,
    min_count: int = 100,
    cap: int = 100_000,
    kappa: float = 2.0,
    psi_samples: int = 0,
    t_grid=None,
) -> TailResult:
    """Empirical survival ``Leb{r > T}`` of the section roof with a log-linear
    fit over the largest contiguous range of bins holding >= ``min_count``
    samples, plus optionally the return-count integral on a subsample."""
    parts = section_returns(sec, samples, seed, streams, threads, cap)
    r = np.concatenate([p[0][:, 0] for p in parts])
    status = np.concatenate([p[1][:, 0] for p in parts])
    ties = int((status == 3).sum())
    if (status == 1).any():
        raise SpecError("sampler produced points outside the section")
    keep = status != 3
    r, status = r[keep], status[keep]
    n = r.size
    cens = status == 2
    exact = r[~cens]
    ceiling = float(r[cens].min()) if cens.any() else math.inf
    top = T_max if T_max is not None else float(min(exact.max(), ceiling))
    edges = np.arange(0.0, top + bin_width, bin_width)
    srt = np.sort(exact)
    above = exact.size - np.searchsorted(srt, edges, side="right") + (r[cens][None, :] > edges[:, None]).sum(axis=1)
    S = above / n
    se = np.sqrt(S * (1 - S) / n)
    survival = [(float(T), float(s), float(e), int(n)) for T, s, e in zip(edges, S, se)]
    # fit range: the longest run of consecutive bins with >= min_count samples,
    # kept below the smallest censored lower bound
    counts = np.histogram(exact, bins=edges)[0] if edges.size > 1 else np.zeros(0, int)
    good = (counts >= min_count) & (edges[1:] <= ceiling)
    best, start = (0, 0), None
    for i, g in enumerate(np.append(good, False)):
        if g and start is None:
            start = i
        elif not g and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    # survival is evaluated at the bin edges spanning the run
    idx = np.arange(best[0], best[1] + 1) if best[1] > best[0] else np.arange(0)
    idx = idx[S[idx] > 0]
    if idx.size >= 3:
        slope, icpt, r2 = linear_fit(edges[idx], np.log(S[idx]))
        rng_ = (float(edges[idx[0]]), float(edges[idx[-1]]))
    else:
        slope, icpt, r2, rng_ = math.nan, math.nan, math.nan, (math.nan, math.nan)
    psi = []
    if psi_samples:
        psi = psi_integral_section(sec, psi_samples, seed + 1, kappa, t_grid, streams=streams, threads=threads, cap=cap)
    return TailResult(
        Provenance(seed, samples, streams), sec.kinds, survival, slope, icpt, r2, rng_,
        float(exact.min()), int(cens.sum()), ties, psi,
    )


def psi_integral_section(sec, samples, seed, kappa=2.0, t_grid=None, *, streams=DEFAULT_STREAMS, threads=None, cap=100_000):
    """``int kappa^{-Psi_t}`` over section points (flow started on the section)."""
    t_grid = np.asarray(t_grid if t_grid is not None else np.linspace(0, 6, 13), float)
    nret = int(t_grid.max() / math.log(2)) + 1  # roof >= ln 2 bounds the count
    parts = section_returns(sec, samples, seed, streams, threads, cap, returns=nret)
    rows = []
    vals = []
    for rs, st, *_ in parts:
        cum = np.cumsum(rs, axis=1)
        psi = (cum[:, :, None] <= t_grid[None, None, :]).sum(axis=1)
        vals.append((kappa ** (-psi.astype(float))).sum(axis=0))
    sizes = np.array([p[0].shape[0] for p in parts], float)
    est = np.sum(vals, axis=0) / sizes.sum()
    for j, t in enumerate(t_grid):
        loo = [(est[j] * sizes.sum() - v[j]) / (sizes.sum() - s) for v, s in zip(vals, sizes)]
        k = len(loo)
        se = math.sqrt((k - 1) / k * float(np.sum((np.array(loo) - np.mean(loo)) ** 2))) if k > 1 else math.nan
        rows.append((float(t), float(est[j]), se, int(sizes.sum())))
    return rows


# -- suspension semiflows ------------------------------------------------------


def sample_suspension(spec: MarkovMapSpec, rng, n: int):
    """``n`` points from the normalized ``Leb x Leb`` on ``{(x, a): a < r(x)}``
    (Lebesgue-invariant specs only)."""
    if not is_lebesgue_invariant(spec):
        raise SpecError("suspension sampling needs a Lebesgue-invariant spec")
    arrs = kernel_arrays(spec)
    rmax = max(float(b.r(np.linspace(0, 1, 1025)).max()) for b in spec.branches)
    xs = np.empty(n)
    got = 0
    while got < n:
        m = max(64, int(1.3 * (n - got)))
        x = rng.random(m)
        r = _roofs(x, arrs)
        acc = x[rng.random(m) * rmax < r]
        k = min(acc.size, n - got)
        xs[got:got + k] = acc[:k]
        got += k
    r = _roofs(xs, arrs)
    a = rng.random(n) * r
    return xs, a


def _roofs(x, arrs):
    return _roof_vec(x, *arrs)


@K.njit(cache=True)
def _roof_vec(x, lo, slope, shift, rkind, rpar):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = K.roof_eval(x[i], lo, slope, shift, rkind, rpar)[0]
    return out


@dataclass
class CurveResult:
    provenance: Provenance
    rows: list[tuple[float, float, float, int]]  # (t, value, stderr, n)
    fit: RateFit | None
    params: dict

    def to_json(self) -> dict:
        return {
            **self.provenance.to_json(),
            "params": self.params,
            "table": [list(r) for r in self.rows],
            "fit": self.fit.to_json() if self.fit else None,
        }

    def csv(self) -> str:
        return "\n".join(["t,value,stderr,n"] + [f"{t!r},{v!r},{e!r},{n}" for t, v, e, n in self.rows]) + "\n"


def psi_integral(
    spec: MarkovMapSpec,
    samples: int,
    seed: int,
    *,
    kappa: float = 2.0,
    t_grid=None,
    streams: int = DEFAULT_STREAMS,
    threads=None,
    jitter: float = JITTER,
) -> CurveResult:
    """``int kappa^{-Psi_t} d mu_r`` on a t-grid with a fitted exponential rate."""
    t_grid = np.asarray(t_grid if t_grid is not None else np.linspace(0, 8, 17), float)
    arrs = kernel_arrays(spec)

    def task(i, rng, n, off):
        x, a = sample_suspension(spec, rng, n)
        psi = K.psi_batch(x, a, t_grid, *arrs, seed, off, jitter)
        return np.concatenate([(kappa ** (-psi.astype(float))).sum(axis=0), [n]])

    parts = run_streams(task, seed, samples, streams, threads)
    stat = lambda p: p[:-1] / p[-1]
    est, se = jackknife(stat, parts)
    rows = [(float(t), float(v), float(e), samples) for t, v, e in zip(t_grid, est, se)]
    mask = t_grid > 0
    fit = _rate_fit(t_grid, stat, parts, mask)
    return CurveResult(Provenance(seed, samples, streams), rows, fit, {"kappa": kappa, "jitter": jitter})


def correlation_estimate(
    spec: MarkovMapSpec,
    U: tuple,
    V: tuple,
    t_grid,
    samples: int,
    seed: int,
    *,
    streams: int = DEFAULT_STREAMS,
    threads=None,
    jitter: float = JITTER,
    z_min: float = 3.0,
) -> CurveResult:
    """``rho(t) = int U V o T_t - int U int V`` under the normalized suspension
    measure, with jackknife errors and a log-linear decay fit over the leading
    range where ``|rho| > z_min`` standard errors.

    ``U`` and ``V`` are ``(name, p0, p1)`` with name in :data:`OBSERVABLES`;
    ``bump`` is ``exp(-((x - p0)/p1)^2) sin(pi a / r(x))``.
    """
    t_grid = np.asarray(t_grid, float)
    arrs = kernel_arrays(spec)
    uk, vk = OBSERVABLES[U[0]], OBSERVABLES[V[0]]
    p0, p1 = float(U[1]) if len(U) > 1 else 0.5, float(U[2]) if len(U) > 2 else 0.15

    def task(i, rng, n, off):
        x, a = sample_suspension(spec, rng, n)
        S = K.correlation_sums(x, a, t_grid, *arrs, uk, vk, p0, p1, seed, off, jitter)
        return np.concatenate([S.ravel(), [n]])

    parts = run_streams(task, seed, samples, streams, threads)
    nt = t_grid.size

    def rho(p):
        S = p[:-1].reshape(nt, 6) / p[-1]
        return S[:, 2] - S[:, 0] * S[:, 1]

    est, se = jackknife(rho, parts)
    rows = [(float(t), float(v), float(e), samples) for t, v, e in zip(t_grid, est, se)]
    ok = np.abs(est) > z_min * np.where(np.isfinite(se), se, np.inf)
    k = 0
    while k < nt and ok[k]:
        k += 1
    fit = None
    if k >= 3:
        mask = np.zeros(nt, bool)
        mask[:k] = True
        fit = _rate_fit(t_grid, rho, parts, mask)
    return CurveResult(
        Provenance(seed, samples, streams), rows, fit,
        {"U": list(U), "V": list(V), "jitter": jitter, "z_min": z_min},
    )


# -- sampled dynamics invariants ----------------------------------------------


def hilbert_distances(F: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row-wise Hilbert distance in the open cone ``{F x > 0}``."""
    fx, fy = X @ F.T, Y @ F.T
    if (fx <= 0).any() or (fy <= 0).any():
        raise SpecError("points must lie strictly inside the cone")
    ratio = fx / fy
    return np.log(ratio.max(axis=1) * (1.0 / ratio).max(axis=1))


@dataclass
class InvariantReport:
    provenance: Provenance
    min_r: float
    roof_violations: int
    max_contraction: float
    pairs: int
    censored: int

    def to_json(self) -> dict:
        return {**self.provenance.to_json(), **{k: v for k, v in self.__dict__.items() if k != "provenance"}}


def section_invariants(sec: SectionSpec, samples: int, pairs: int, seed: int, *, streams: int = DEFAULT_STREAMS, threads=None, cap: int = 100_000) -> InvariantReport:
    """Roof floor ``r >= ln 2`` on ``samples`` returns, and the Hilbert-metric
    contraction of the fibre map on ``pairs`` pairs ``(tau, tau')`` sharing
    ``lambda`` (the return word depends on ``lambda`` only)."""
    rc, tab, loop, v0 = _section_tables(sec)
    F = np.array([[float(c) for c in f] for f in theta_cone(sec.perm).facets])
    parts = section_returns(sec, samples, seed, streams, threads, cap)
    r = np.concatenate([p[0][:, 0] for p in parts])
    st = np.concatenate([p[1][:, 0] for p in parts])
    done = st == 0
    min_r = float(r[done].min())
    viol = int((r[done] < math.log(2)).sum())
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed).spawn(streams + 1)[-1]))
    lam, tau1 = sample_section(sec, rng, pairs)
    _, tau2 = sample_section(sec, rng, pairs)
    out = []
    for tau in (tau1, tau2):
        out.append(K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, cap))
    ok = (out[0][2] == 0) & (out[1][2] == 0)
    d0 = hilbert_distances(F, tau1[ok], tau2[ok])
    d1 = hilbert_distances(F, out[0][4][ok], out[1][4][ok])
    pos = d0 > 0
    worst = float((d1[pos] / d0[pos]).max()) if pos.any() else math.nan
    return InvariantReport(Provenance(seed, samples, streams), min_r, viol, worst, int(ok.sum()), int((~done).sum()))


def float_area_drift(pi, steps: int, seed: int) -> dict:
    """Relative area deviation of a float zippered orbit of ``steps`` steps."""
    rc = rauzy_class(pi)
    tab = rc.tables
    om = np.array([omega_matrix(p).rows for p in rc.vertices], float)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    lam = rng.dirichlet(np.ones(pi.d))
    tau = np.array([float(c) for c in theta_cone(pi).witness])
    v0 = rc.index[pi]
    tau = tau / K._area(om[v0], lam, tau)
    dh, dt, *_ = K.zippered_area_drift(tab["next"], tab["winner"], tab["loser"], om, v0, lam, tau, steps)
    return {"seed": seed, "steps": steps, "drift_heights": float(dh), "drift_tau": float(dt), "tie": dh < 0}

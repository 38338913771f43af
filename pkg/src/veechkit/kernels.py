"""Hot loops.  Each kernel is plain Python/numpy code compiled with numba when
available (see :mod:`veechkit._accel`); setting ``VEECHKIT_DISABLE_NUMBA=1``
runs the same code uncompiled, and the vectorized numpy variants below serve
as the reference implementation for the batch kernels.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit

EPS = 2.0**-52


# -- certified restricted-tree measure ---------------------------------------


@njit(cache=True)
def restricted_tree_sums(nxt, win, los, v0, q, alpha, tnum, tden, cutoff, max_nodes, max_depth):
    """Depth-first walk of the tree of paths avoiding winner ``alpha``; a path
    is emitted at the first node with ``w_alpha * tden > tnum * q_alpha``.

    Returns ``(emitted, unresolved, nodes, status)`` with float mass sums
    (each node mass is ``N(q)/N(w)``).  ``status`` is 0 when finished, 1 when
    ``max_nodes`` was hit, 2 when the depth capacity was hit.
    """
    d = q.shape[0]
    W = np.empty((max_depth + 1, d), np.int64)
    V = np.empty(max_depth + 1, np.int64)
    C = np.zeros(max_depth + 1, np.int64)  # next child to try at each level
    nq = 1.0
    for i in range(d):
        nq *= q[i]
        W[0, i] = q[i]
    V[0] = v0
    target = tnum * q[alpha]
    emitted = 0.0
    unresolved = 0.0
    nodes = 0
    depth = 0
    status = 0
    fresh = True
    while depth >= 0:
        if fresh:
            nodes += 1
            fresh = False
            if W[depth, alpha] * tden > target:
                mass = nq
                for i in range(d):
                    mass /= W[depth, i]
                emitted += mass
                depth -= 1
                continue
            mass = nq
            for i in range(d):
                mass /= W[depth, i]
            if mass < cutoff or nodes >= max_nodes or depth == max_depth:
                unresolved += mass
                if nodes >= max_nodes:
                    status = 1
                elif depth == max_depth and mass >= cutoff:
                    status = 2
                depth -= 1
                continue
            C[depth] = 0
        k = C[depth]
        if k == 2:
            depth -= 1
            continue
        C[depth] = k + 1
        v = V[depth]
        w = win[v, k]
        if w == alpha:
            continue
        l = los[v, k]
        for i in range(d):
            W[depth + 1, i] = W[depth, i]
        W[depth + 1, l] += W[depth, w]
        V[depth + 1] = nxt[v, k]
        depth += 1
        fresh = True
    return emitted, unresolved, nodes, status


def certified_restricted_measure(rc, v0, q, alpha, T, cutoff, max_nodes=50_000_000, max_depth=1 << 21):
    """Rigorous float bounds ``(lower, upper, nodes, status)`` for the
    Kerckhoff family: the rounding error of every mass and of the running
    sums is absorbed into a relative margin of ``(nodes + d + 2) * 2^-52``."""
    from fractions import Fraction

    T = Fraction(T)
    tab = rc.tables
    qa = np.asarray(q, dtype=np.int64)
    em, un, nodes, status = restricted_tree_sums(
        tab["next"], tab["winner"], tab["loser"], v0, qa, alpha,
        T.numerator, T.denominator, float(cutoff), max_nodes, max_depth,
    )
    margin = (nodes + len(q) + 2) * EPS
    return em * (1 - margin), (em + un) * (1 + margin), nodes, status


# -- deterministic jitter ----------------------------------------------------


_M64 = 0xFFFFFFFFFFFFFFFF

if HAVE_NUMBA:

    @njit(cache=True)
    def splitmix64(x):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        z = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

else:

    def splitmix64(x):
        # same recurrence on Python ints, masked to 64 bits
        x = (int(x) + 0x9E3779B97F4A7C15) & _M64
        z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)


@njit(cache=True)
def hash_uniform(key, i, j):
    """Uniform in [0, 1) from a counter triple; independent of chunking."""
    h = splitmix64(np.uint64(key) ^ splitmix64(np.uint64(i) ^ splitmix64(np.uint64(j))))
    return float(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


# -- Rauzy section returns ---------------------------------------------------


@njit(cache=True, nogil=True)
def section_return_batch(nxt, win, los, v0, loop, lam, tau, cap):
    """First return to the section for each row of ``lam``/``tau`` (float).

    ``loop`` holds the loop kinds (0 top, 1 bottom) starting at vertex ``v0``.
    Long runs of a self-loop arrow are taken in one block once the last ``L``
    steps already repeat it (no window inside such a run can match a neat
    loop); ``cap`` bounds the number of single steps plus blocks.
    Returns ``r, steps, status, lam_out, tau_out``; status 0 ok, 1 not in the
    section, 2 cap reached (``r`` is then a lower bound), 3 tie.
    """
    n, d = lam.shape
    L = loop.shape[0]
    r = np.full(n, np.nan)
    steps = np.zeros(n, np.int64)
    status = np.zeros(n, np.int64)
    lam_out = np.empty_like(lam)
    tau_out = np.empty_like(tau)
    kinds = np.empty(L, np.int64)
    verts = np.empty(L, np.int64)
    l = np.empty(d)
    t = np.empty(d)
    cl = np.empty(d)
    ct = np.empty(d)
    for s in range(n):
        for i in range(d):
            l[i] = lam[s, i]
            t[i] = tau[s, i]
        v = v0
        acc = 0.0
        cand = -1
        cacc = 0.0
        done = False
        m = 0  # Rauzy steps taken; kinds/verts are ring buffers indexed by step mod L
        run = 0  # length of the current run of one self-loop arrow
        lastk = -1
        for it in range(cap + 1):
            if cand >= 0 and m == cand + L:
                ok = True
                for j in range(L):
                    if kinds[(cand + j) % L] != loop[j]:
                        ok = False
                        break
                if ok:
                    tot = 0.0
                    for i in range(d):
                        tot += cl[i]
                    r[s] = cacc - np.log(tot)
                    for i in range(d):
                        lam_out[s, i] = cl[i] / tot
                        tau_out[s, i] = ct[i] * tot
                    steps[s] = cand
                    done = True
                    break
                cand = -1
            if m >= L and verts[m % L] == v0:
                ok = True
                for j in range(L):
                    if kinds[(m - L + j) % L] != loop[j]:
                        ok = False
                        break
                if ok:
                    cand = m
                    cacc = acc
                    for i in range(d):
                        cl[i] = l[i]
                        ct[i] = t[i]
            if m == L and cand != L:
                status[s] = 1
                done = True
                break
            if it == cap:
                break
            a = win[v, 0]
            b = win[v, 1]
            if l[a] > l[b]:
                k = 0
            elif l[a] < l[b]:
                k = 1
            else:
                status[s] = 3
                done = True
                break
            w = win[v, k]
            lo = los[v, k]
            reps = 1
            if nxt[v, k] == v and k == lastk:
                run += 1
                if run >= L and cand < 0 and m >= L:
                    # the arrow repeats while l[w] > l[lo]; stop two short of the end
                    j = np.floor(l[w] / l[lo]) - 2.0
                    if j > 1.0:
                        reps = np.int64(j)
            else:
                run = 1 if nxt[v, k] == v else 0
            lastk = k
            if reps == 1:
                kinds[m % L] = k
                verts[m % L] = v
                l[w] -= l[lo]
                t[w] -= t[lo]
            else:
                # the ring already holds L copies of (k, v)
                l[w] -= reps * l[lo]
                t[w] -= reps * t[lo]
                run += reps - 1
            m += reps
            v = nxt[v, k]
            tot = 0.0
            for i in range(d):
                tot += l[i]
            for i in range(d):
                l[i] /= tot
                t[i] *= tot
            acc -= np.log(tot)
        if not done:
            # censored: the elapsed log-time is a lower bound for the return time
            status[s] = 2
            r[s] = acc
            steps[s] = m
    return r, steps, status, lam_out, tau_out


# -- zippered float trajectories ---------------------------------------------


@njit(cache=True, nogil=True)
def zippered_area_drift(nxt, win, los, omega, v0, lam0, tau0, n):
    """Run ``n`` renormalized zippered steps in floats.

    Heights are carried by their own recurrence ``h_l += h_w``, which only adds
    positive numbers; the area ``<lambda, h>`` is then well conditioned.
    Returns ``(drift_h, drift_tau, lam, tau, h, v, logscale)``: the maximal
    relative area deviation from the carried heights and from ``-Omega tau``
    (both -1 on a tie).
    """
    d = lam0.shape[0]
    l = lam0.copy()
    t = tau0.copy()
    v = v0
    h = np.empty(d)
    for y in range(d):
        s = 0.0
        for x in range(d):
            s -= omega[v, y, x] * t[x]
        h[y] = s
    a0 = 0.0
    for i in range(d):
        a0 += l[i] * h[i]
    worst = 0.0
    worst_t = 0.0
    acc = 0.0
    for step in range(n):
        a = win[v, 0]
        b = win[v, 1]
        if l[a] > l[b]:
            k = 0
        elif l[a] < l[b]:
            k = 1
        else:
            return -1.0, -1.0, l, t, h, v, acc
        w = win[v, k]
        lo = los[v, k]
        l[w] -= l[lo]
        t[w] -= t[lo]
        h[lo] += h[w]
        v = nxt[v, k]
        tot = 0.0
        for i in range(d):
            tot += l[i]
        for i in range(d):
            l[i] /= tot
            t[i] *= tot
            h[i] *= tot
        acc -= np.log(tot)
        ar = 0.0
        for i in range(d):
            ar += l[i] * h[i]
        dev = abs(ar - a0) / abs(a0)
        if dev > worst:
            worst = dev
        dev = abs(_area(omega[v], l, t) - a0) / abs(a0)
        if dev > worst_t:
            worst_t = dev
    return worst, worst_t, l, t, h, v, acc


@njit(cache=True)
def _area(om, l, t):
    d = l.shape[0]
    s = 0.0
    for y in range(d):
        h = 0.0
        for x in range(d):
            h -= om[y, x] * t[x]
        s += l[y] * h
    return s


# -- affine Markov maps and suspensions --------------------------------------
# Branch l maps its image interval [lo_l, hi_l) onto [0, 1) by
# T(y) = (y - c_l) / s_l, the inverse of h_l(x) = s_l x + c_l.
# Roof kinds: 0 constant p0; 1 sine p0 + p1 sin(2 pi (p2 y + p3));
# 2 log-affine ln(p0 x + p1) in the branch variable x = T(y).


@njit(cache=True)
def roof_eval(y, lo, slope, shift, rkind, rpar):
    nb = lo.shape[0]
    l = nb - 1
    for j in range(1, nb):
        if y < lo[j]:
            l = j - 1
            break
    k = rkind[l]
    if k == 0:
        return rpar[l, 0], l
    if k == 1:
        return rpar[l, 0] + rpar[l, 1] * np.sin(2.0 * np.pi * (rpar[l, 2] * y + rpar[l, 3])), l
    x = (y - shift[l]) / slope[l]
    return np.log(rpar[l, 0] * x + rpar[l, 1]), l


@njit(cache=True)
def base_step(y, l, slope, shift, key, i, j, jitter):
    x = (y - shift[l]) / slope[l]
    if jitter > 0.0:
        x += jitter * hash_uniform(key, i, j)
    x = x - np.floor(x)
    return x


@njit(cache=True, nogil=True)
def psi_batch(x0, a0, tgrid, lo, slope, shift, rkind, rpar, key, offset, jitter):
    """Return counts ``Psi_t(x, a)`` for every sample and every ``t`` in the
    sorted grid."""
    n = x0.shape[0]
    nt = tgrid.shape[0]
    psi = np.zeros((n, nt), np.int64)
    for s in range(n):
        x = x0[s]
        # elapsed time measured from the base point: h = a + t
        r, l = roof_eval(x, lo, slope, shift, rkind, rpar)
        used = 0.0  # r^{(count)}(x)
        count = 0
        for it in range(nt):
            h = a0[s] + tgrid[it]
            while used + r <= h:
                used += r
                x = base_step(x, l, slope, shift, key, offset + s, count, jitter)
                count += 1
                r, l = roof_eval(x, lo, slope, shift, rkind, rpar)
            psi[s, it] = count
    return psi


@njit(cache=True)
def observable(kind, x, a, r, p0, p1):
    if kind == 0:
        return 1.0
    if kind == 1:
        # smooth bump in x times a fibre profile vanishing at both ends
        u = (x - p0) / p1
        return np.exp(-u * u) * np.sin(np.pi * a / r)
    if kind == 2:
        return np.cos(2.0 * np.pi * x)
    return a / r


@njit(cache=True, nogil=True)
def correlation_sums(x0, a0, tgrid, lo, slope, shift, rkind, rpar, ukind, vkind, op0, op1, key, offset, jitter):
    """Per-``t`` sums of ``U``, ``V o T_t``, their products and squares."""
    n = x0.shape[0]
    nt = tgrid.shape[0]
    out = np.zeros((nt, 6))
    for s in range(n):
        x = x0[s]
        r, l = roof_eval(x, lo, slope, shift, rkind, rpar)
        U = observable(ukind, x, a0[s], r, op0, op1)
        used = 0.0
        count = 0
        for it in range(nt):
            h = a0[s] + tgrid[it]
            while used + r <= h:
                used += r
                x = base_step(x, l, slope, shift, key, offset + s, count, jitter)
                count += 1
                r, l = roof_eval(x, lo, slope, shift, rkind, rpar)
            V = observable(vkind, x, h - used, r, op0, op1)
            out[it, 0] += U
            out[it, 1] += V
            out[it, 2] += U * V
            out[it, 3] += U * U
            out[it, 4] += V * V
            out[it, 5] += U * U * V * V
    return out


@njit(cache=True)
def suspension_orbit(x, a, t, lo, slope, shift, rkind, rpar, key, jitter):
    """Evolve one suspension point for time ``t``; returns ``(x, a, n)``."""
    r, l = roof_eval(x, lo, slope, shift, rkind, rpar)
    h = a + t
    n = 0
    while h >= r:
        h -= r
        x = base_step(x, l, slope, shift, key, 0, n, jitter)
        n += 1
        r, l = roof_eval(x, lo, slope, shift, rkind, rpar)
    return x, h, n


# -- numpy references ---------------------------------------------------------


def section_return_numpy(nxt, win, los, v0, loop, lam, tau, cap):
    """Vectorized reference for :func:`section_return_batch`: all samples
    advance in lock step until each has returned."""
    lam = np.array(lam, dtype=float)
    tau = np.array(tau, dtype=float)
    n, d = lam.shape
    L = len(loop)
    loop = np.asarray(loop)
    r = np.full(n, np.nan)
    steps = np.zeros(n, np.int64)
    status = np.full(n, 2, np.int64)
    lam_out = np.empty_like(lam)
    tau_out = np.empty_like(tau)
    v = np.full(n, v0, np.int64)
    acc = np.zeros(n)
    kinds = np.zeros((n, L), np.int64)
    verts = np.zeros((n, L), np.int64)
    cand = np.full(n, -1, np.int64)
    cl, ct, cacc = lam.copy(), tau.copy(), np.zeros(n)
    live = np.ones(n, bool)
    rows = np.arange(n)
    for m in range(cap + 1):
        idx = rows[live]
        if idx.size == 0:
            break
        chk = idx[(cand[idx] >= 0) & (m == cand[idx] + L)]
        if chk.size:
            ring = np.take_along_axis(kinds[chk], (cand[chk][:, None] + np.arange(L)) % L, axis=1)
            ok = (ring == loop).all(axis=1)
            good = chk[ok]
            tot = cl[good].sum(axis=1)
            r[good] = cacc[good] - np.log(tot)
            lam_out[good] = cl[good] / tot[:, None]
            tau_out[good] = ct[good] * tot[:, None]
            steps[good] = cand[good]
            status[good] = 0
            live[good] = False
            cand[chk[~ok]] = -1
        idx = rows[live]
        if m >= L and idx.size:
            ring = kinds[idx][:, (m - L + np.arange(L)) % L]
            hit = idx[(verts[idx, m % L] == v0) & (ring == loop).all(axis=1)]
            cand[hit] = m
            cacc[hit] = acc[hit]
            cl[hit] = lam[hit]
            ct[hit] = tau[hit]
        if m == L:
            bad = idx[cand[idx] != L]
            status[bad] = 1
            live[bad] = False
        idx = rows[live]
        if m == cap or idx.size == 0:
            break
        vv = v[idx]
        la = lam[idx, win[vv, 0]]
        lb = lam[idx, win[vv, 1]]
        tie = la == lb
        status[idx[tie]] = 3
        live[idx[tie]] = False
        idx, vv, la, lb = idx[~tie], vv[~tie], la[~tie], lb[~tie]
        k = np.where(la > lb, 0, 1)
        w = win[vv, k]
        lo = los[vv, k]
        kinds[idx, m % L] = k
        verts[idx, m % L] = vv
        lam[idx, w] -= lam[idx, lo]
        tau[idx, w] -= tau[idx, lo]
        v[idx] = nxt[vv, k]
        tot = lam[idx].sum(axis=1)
        lam[idx] /= tot[:, None]
        tau[idx] *= tot[:, None]
        acc[idx] -= np.log(tot)
    cens = status == 2
    r[cens] = acc[cens]
    steps[cens] = cap
    return r, steps, status, lam_out, tau_out

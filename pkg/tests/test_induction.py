import math
import random
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from veechkit.cocycle import theta_cone
from veechkit.induction import (
    EXACT,
    F64,
    IetState,
    SectionError,
    SectionSpec,
    TieError,
    ZipperedState,
    area,
    iet_evaluate,
    in_fundamental_domain,
    rauzy_orbit,
    rauzy_step,
    return_branches,
    sample_section,
    section_membership,
    section_point,
    section_return,
    trace_to_json,
    veech_flow,
    zippered_orbit,
    zippered_step,
)
from veechkit.rauzy import Path, parse_permutation, rauzy_class, symmetric_permutation

AB = parse_permutation("a b / b a")
F = Fraction


def test_iet_evaluate_fixtures():
    s = IetState((F(3, 5), F(2, 5)), AB)
    assert iet_evaluate(s, F(1, 10)) == F(1, 2)
    assert iet_evaluate(s, F(7, 10)) == F(1, 10)
    assert iet_evaluate(s, 0) == F(2, 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10**6))
def test_iet_is_a_bijection_on_grid(d, seed):
    rng = random.Random(seed)
    pi = rng.choice(rauzy_class(symmetric_permutation(d)).vertices)
    lam = tuple(F(rng.randint(1, 9), 7) for _ in range(d))
    s = IetState(lam, pi)
    xs = [F(k, 14) for k in range(int(14 * s.total))]
    ys = [iet_evaluate(s, x) for x in xs]
    assert len(set(ys)) == len(ys) and all(0 <= y < s.total for y in ys)


def test_rauzy_step_fixtures():
    s, a = rauzy_step(IetState((F(3, 5), F(2, 5)), AB))
    assert a.kind == "b" and AB.name(a.winner) == "a" and s.lengths == (F(1, 5), F(2, 5))
    with pytest.raises(TieError):
        rauzy_step(IetState((F(1, 2), F(1, 2)), AB))
    s, a = rauzy_step(IetState((3, 1), AB))
    assert a.kind == "b" and s.lengths == (2, 1)


def test_orbit_fixtures():
    phi = (1 + math.sqrt(5)) / 2
    tr = rauzy_orbit(IetState((phi, 1.0), AB), 5, F64)
    assert tr.kinds == "btbtb"
    tr = rauzy_orbit(IetState((2, 1), AB), 10)
    assert tr.tie and len(tr) <= 2
    assert len(rauzy_orbit(IetState((2, 1), AB), 0)) == 0


def test_orbit_csv_and_json():
    tr = rauzy_orbit(IetState((F(5), F(3)), AB), 3)
    lines = tr.to_csv().strip().splitlines()
    assert lines[0].startswith("step,kind,winner,loser") and len(lines) == 4
    assert '"kind"' in trace_to_json(tr)


def test_zippered_step_fixture():
    z = ZipperedState((F(3, 5), F(2, 5)), AB, (1, -1))
    z2, a = zippered_step(z)
    assert z2.lengths == (F(1, 5), F(2, 5)) and z2.tau == (2, -1)


def test_area_fixtures():
    assert area(ZipperedState((F(1, 2), F(1, 2)), AB, (1, -1))) == 1
    with pytest.raises(ValueError):
        ZipperedState((F(1, 2), F(1, 2)), AB, (0, 0))


def _random_exact_state(pi, rng, digits=60):
    d = pi.d
    lam = tuple(F(rng.randrange(10**digits, 10 ** (digits + 1)), 10**digits) for _ in range(d))
    w = theta_cone(pi).witness
    tau = tuple(F(x) + F(rng.randrange(-10**digits, 10**digits), 10 ** (digits + 2)) for x in w)
    return ZipperedState(lam, pi, tau)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_area_invariant_exact(d):
    rng = random.Random(d)
    pi = symmetric_permutation(d)
    z = _random_exact_state(pi, rng)
    A = area(z)
    tr = zippered_orbit(z, 200)
    assert len(tr) > 50
    for _, st_ in tr.steps:
        assert area(st_) == A
        assert theta_cone(st_.perm).interior(st_.tau)


def test_float_orbit_tracks_exact_orbit():
    rng = random.Random(7)
    pi = symmetric_permutation(3)
    z = _random_exact_state(pi, rng, 40)
    ex = zippered_orbit(z, 30)
    fl = zippered_orbit(z, 30, F64)
    assert ex.kinds == fl.kinds
    tot = sum(ex.steps[-1][1].lengths)
    for a, b in zip(ex.steps[-1][1].lengths, fl.steps[-1][1].lengths):
        assert math.isclose(float(a / tot), b, rel_tol=1e-9)


def test_veech_flow_fixtures():
    z = ZipperedState((0.6, 0.4), AB, (1.0, -1.0))
    assert veech_flow(z, 0.0)[0] == z
    out, n = veech_flow(z, math.log(2))
    assert n == 1
    assert np.allclose(out.lengths, (0.4, 0.8)) and np.allclose(out.tau, (1.0, -0.5))
    ze = ZipperedState((F(3, 5), F(2, 5)), AB, (1, -1))
    out, n = veech_flow(ze, factor=2)
    assert out.lengths == (F(2, 5), F(4, 5)) and out.tau == (1, F(-1, 2)) and n == 1
    assert in_fundamental_domain(out)


def test_veech_flow_semigroup_and_area():
    rng = random.Random(3)
    pi = symmetric_permutation(3)
    z0 = _random_exact_state(pi, rng, 30)
    z0 = ZipperedState(tuple(x / sum(z0.lengths) for x in z0.lengths), pi, tuple(x * sum(z0.lengths) for x in z0.tau))
    assert in_fundamental_domain(z0)
    a, _ = veech_flow(z0, factor=F(5, 2))
    b, _ = veech_flow(a, factor=F(3))
    c, _ = veech_flow(z0, factor=F(15, 2))
    assert b.lengths == c.lengths and b.tau == c.tau and b.perm == c.perm
    assert area(c) == area(z0)
    with pytest.raises(ValueError):
        veech_flow(z0)


def test_section_membership_fixtures():
    sec = SectionSpec(Path(AB, "tb"))
    z = section_point(sec, (1, 1))
    assert section_membership(z, sec)
    bad = ZipperedState((F(9, 10), F(1, 10)), AB, z.tau)
    assert not section_membership(bad, sec)
    with pytest.raises(SectionError):
        SectionSpec(Path(AB, "tbtb"))


def test_section_return_exact_and_roof_floor():
    sec = SectionSpec(Path(AB, "tb"))
    rng = random.Random(11)
    done = 0
    for _ in range(30):
        x = (F(rng.randrange(1, 10**30), 10**30), F(rng.randrange(1, 10**30), 10**30))
        z = section_point(sec, x)
        try:
            ret = section_return(z, sec)
        except (TieError, SectionError):
            continue
        assert ret.r >= math.log(2)
        assert section_membership(ret.state, sec)
        assert area(ret.state) == 1
        done += 1
    assert done >= 20


def test_section_return_word_against_multiprecision():
    """The return word of a float state matches a 60-digit computation for short returns."""
    mpmath.mp.dps = 60
    sec = SectionSpec(Path(AB, "tb"))
    rng = np.random.default_rng(5)
    lam, tau = sample_section(sec, rng, 40)
    checked = 0
    for l, t in zip(lam, tau):
        z = ZipperedState(tuple(float(v) for v in l), AB, tuple(float(v) for v in t))
        ret = section_return(z, sec)
        if ret.steps > 20:
            continue
        lm = [mpmath.mpf(float(v)) for v in l]
        kinds = ""
        for a in ret.word.arrows:
            assert lm[a.winner] > lm[a.loser]
            lm[a.winner] -= lm[a.loser]
            kinds += a.kind
        r = float(-mpmath.log(sum(lm)))
        assert math.isclose(r, ret.r, rel_tol=1e-9)
        checked += 1
    assert checked > 10


def test_sampler_lands_in_section():
    for d in (2, 3):
        sec = SectionSpec.default(symmetric_permutation(d))
        lam, tau = sample_section(sec, np.random.default_rng(1), 200)
        for l, t in zip(lam, tau):
            z = ZipperedState(tuple(l), sec.perm, tuple(t))
            assert section_membership(z, sec, tol=1e-9)


def test_return_branches_partition():
    sec = SectionSpec(Path(AB, "tb"))
    branches, discarded = return_branches(sec, F(1, 200))
    total = sum(m for _, m in branches) + discarded
    assert total == 1
    assert all(g.start == AB for g, _ in branches)

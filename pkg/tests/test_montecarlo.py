import math

import numpy as np
import pytest
from scipy.integrate import quad

from veechkit.induction import SectionSpec
from veechkit.montecarlo import (
    correlation_estimate,
    float_area_drift,
    jackknife,
    psi_integral,
    run_streams,
    section_invariants,
    section_returns,
    stream_sizes,
    tail_estimate,
)
from veechkit.rauzy import symmetric_permutation
from veechkit.spectral import doubling_spec

SEC2 = SectionSpec.default(symmetric_permutation(2))


def test_stream_sizes_partition():
    assert stream_sizes(10, 4) == [3, 3, 2, 2]
    assert sum(stream_sizes(12345, 16)) == 12345


def test_streams_do_not_depend_on_threads():
    a = section_returns(SEC2, 400, 5, streams=4, threads=1)
    b = section_returns(SEC2, 400, 5, streams=4, threads=3)
    for pa, pb in zip(a, b):
        assert all(np.array_equal(x, y, equal_nan=True) for x, y in zip(pa, pb))
    c = section_returns(SEC2, 400, 6, streams=4, threads=1)
    assert not np.array_equal(a[0][0], c[0][0])


def test_run_streams_order_and_offsets():
    out = run_streams(lambda i, rng, n, off: (i, n, off), 0, 10, 3, threads=2)
    assert out == [(0, 4, 0), (1, 3, 4), (2, 3, 7)]


def test_jackknife_of_mean_is_standard_error():
    rng = np.random.default_rng(0)
    x = rng.normal(size=12)
    parts = [np.array([v, 1.0]) for v in x]
    est, se = jackknife(lambda p: p[0] / p[1], parts)
    assert math.isclose(est, x.mean())
    assert math.isclose(se, x.std(ddof=1) / math.sqrt(x.size), rel_tol=1e-12)


def test_tail_survival_fixtures():
    res = tail_estimate(SEC2, 20_000, 1, streams=4, min_count=20)
    assert res.min_r >= math.log(2) - 1e-12
    for T, S, _, _ in res.survival:
        if T < math.log(2):
            assert S == 1.0
    S = [s for _, s, _, _ in res.survival]
    assert all(a >= b for a, b in zip(S, S[1:]))
    assert res.slope < 0 and res.r2 > 0.9
    assert "T,value,stderr,n" in res.csv()


def test_psi_integral_constant_roof_exact():
    spec = doubling_spec()
    t = np.linspace(0, 4, 9)
    res = psi_integral(spec, 20_000, 3, t_grid=t, streams=4)
    for (tt, v, se, _) in res.rows:
        n, f = divmod(tt / math.log(2), 1.0)
        exact = 2.0**-n * (1 - f / 2)
        assert abs(v - exact) < max(5 * se, 1e-12)
    assert res.rows[0][1] == 1.0


def test_correlation_constant_observable_vanishes():
    res = correlation_estimate(doubling_spec("sine"), ("const",), ("bump", 0.5, 0.15), [0, 0.5, 1], 5000, 2, streams=4)
    assert all(abs(v) < 1e-12 for _, v, _, _ in res.rows)


def test_correlation_at_zero_is_variance():
    spec = doubling_spec("sine")
    r = lambda x: math.log(2) + 0.3 * math.sin(2 * math.pi * x)
    g = lambda x: math.exp(-(((x - 0.5) / 0.15) ** 2))
    Z = quad(r, 0, 1)[0]
    m1 = quad(lambda x: g(x) * 2 * r(x) / math.pi, 0, 1)[0] / Z
    m2 = quad(lambda x: g(x) ** 2 * r(x) / 2, 0, 1)[0] / Z
    res = correlation_estimate(spec, ("bump", 0.5, 0.15), ("bump", 0.5, 0.15), [0.0, 1.0], 100_000, 4, streams=8)
    v0, se0 = res.rows[0][1], res.rows[0][2]
    assert abs(v0 - (m2 - m1**2)) < 5 * se0
    assert abs(res.rows[1][1]) < v0


def test_section_invariants_small():
    rep = section_invariants(SEC2, 2000, 200, 7, streams=4)
    assert rep.roof_violations == 0 and rep.min_r >= math.log(2)
    assert rep.max_contraction < 1 and rep.pairs > 100


@pytest.mark.parametrize("d", [2, 3, 5])
def test_float_area_drift(d):
    out = float_area_drift(symmetric_permutation(d), 50_000, d)
    assert not out["tie"] and out["drift_heights"] < 1e-11

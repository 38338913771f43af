import json
import math
import os
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from veechkit import kernels as K
from veechkit._accel import HAVE_NUMBA, backend
from veechkit.induction import SectionSpec, ZipperedState, sample_section, section_return
from veechkit.measure import kerckhoff_measure
from veechkit.montecarlo import _section_tables
from veechkit.rauzy import Path, parse_permutation, rauzy_class, symmetric_permutation

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _batch(d, n, seed):
    sec = SectionSpec.default(symmetric_permutation(d))
    rc, tab, loop, v0 = _section_tables(sec)
    lam, tau = sample_section(sec, np.random.default_rng(seed), n)
    return sec, tab, loop, v0, lam, tau


def test_batch_kernel_matches_python_return():
    sec, tab, loop, v0, lam, tau = _batch(2, 200, 2)
    r, steps, status, lo, to = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 100_000)
    checked = 0
    for i in range(len(lam)):
        if status[i] != 0 or steps[i] > 30:
            continue
        ret = section_return(ZipperedState(tuple(lam[i]), sec.perm, tuple(tau[i])), sec)
        assert ret.steps == steps[i]
        assert math.isclose(ret.r, r[i], rel_tol=1e-8)
        assert np.allclose(ret.state.lengths, lo[i], rtol=1e-8, atol=1e-12)
        checked += 1
    assert checked > 50


def test_batch_kernel_matches_numpy_reference():
    sec, tab, loop, v0, lam, tau = _batch(2, 300, 12)
    a = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 100_000)
    b = K.section_return_numpy(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 100_000)
    short = (a[2] == 0) & (a[1] < 30)
    assert short.sum() > 100
    assert (a[1][short] == b[1][short]).all() and (b[2][short] == 0).all()
    assert np.allclose(a[0][short], b[0][short], rtol=1e-10)


def test_censoring_agrees_in_d3():
    # returns to the d=3 section are long; both backends must censor the same samples
    sec, tab, loop, v0, lam, tau = _batch(3, 40, 3)
    a = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 2000)
    b = K.section_return_numpy(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 2000)
    same = a[2] == b[2]
    assert same.mean() > 0.9
    ok = same & (a[2] == 0) & (a[1] < 30)
    assert np.allclose(a[0][ok], b[0][ok], rtol=1e-10)


def test_kernel_status_codes():
    sec, tab, loop, v0, lam, tau = _batch(2, 5, 0)
    bad = np.array([[0.9, 0.1]])  # first arrows are not the loop
    r, steps, status, *_ = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, bad, tau[:1], 1000)
    assert status[0] == 1
    assert K.section_return_numpy(tab["next"], tab["winner"], tab["loser"], v0, loop, bad, tau[:1], 1000)[2][0] == 1
    tie = np.array([[0.5, 0.5]])
    r, steps, status, *_ = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, tie, tau[:1], 1000)
    assert status[0] == 3
    r, steps, status, *_ = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 1)
    assert (status == 2).all() and (r >= 0).all()


def test_run_acceleration_handles_huge_partial_quotients():
    # lambda close to the boundary of the loop cylinder gives one enormous
    # continued-fraction digit; the kernel must still return within the cap
    sec, tab, loop, v0, lam, tau = _batch(2, 1, 0)
    x = np.array([1.0, 1e-9])
    lam1 = np.array([[x[0] + x[1], x[0] + 2 * x[1]]]) / (2 * x[0] + 3 * x[1])
    z = ZipperedState(tuple(lam1[0]), sec.perm, tuple(tau[0]))
    assert sec.perm == z.perm
    r, steps, status, *_ = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam1, tau[:1], 1000)
    assert status[0] == 0 and steps[0] > 1000 and r[0] > 10


def test_hash_uniform_deterministic():
    u = [K.hash_uniform(7, i, j) for i in range(30) for j in range(30)]
    assert all(0 <= x < 1 for x in u)
    assert u == [K.hash_uniform(7, i, j) for i in range(30) for j in range(30)]
    assert len(set(u)) == len(u)
    assert abs(np.mean(u) - 0.5) < 0.05


def test_area_drift_small():
    from veechkit.montecarlo import float_area_drift

    out = float_area_drift(symmetric_permutation(4), 20_000, 1)
    assert not out["tie"] and out["drift_heights"] < 1e-12


def test_certified_bracket_contains_exact():
    pi = parse_permutation("a b c / c b a")
    rc = rauzy_class(pi)
    exact = kerckhoff_measure(pi, (1, 1, 1), 0, 2)
    lo, up, nodes, status = K.certified_restricted_measure(rc, rc.index[pi], (1, 1, 1), 0, Fraction(2), 1e-4)
    assert status == 0 and nodes > 0
    assert lo <= float(exact.upper) and up >= float(exact.measure)
    assert up < 0.5


SNIPPET = """
import json, numpy as np
from veechkit import kernels as K
from veechkit._accel import backend
from veechkit.induction import SectionSpec, sample_section
from veechkit.montecarlo import _section_tables
from veechkit.rauzy import symmetric_permutation
sec = SectionSpec.default(symmetric_permutation(2))
rc, tab, loop, v0 = _section_tables(sec)
lam, tau = sample_section(sec, np.random.default_rng(3), 50)
r, steps, status, lo, to = K.section_return_batch(tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 100000)
print(json.dumps({"backend": backend(), "r": r.tolist(), "steps": steps.tolist(), "u": K.hash_uniform(3, 4, 5)}))
"""


def _run(disable):
    env = dict(os.environ, PYTHONPATH=os.path.join(ROOT, "src"))
    if disable:
        env["VEECHKIT_DISABLE_NUMBA"] = "1"
    else:
        env.pop("VEECHKIT_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_fallback_matches_compiled():
    a, b = _run(False), _run(True)
    assert a["backend"] == "numba" and b["backend"] == "numpy"
    assert a["steps"] == b["steps"] and a["u"] == b["u"]
    assert np.allclose(a["r"], b["r"], rtol=1e-12)


def test_backend_name():
    assert backend() in ("numba", "numpy")

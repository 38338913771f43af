import json
import math
from fractions import Fraction

import numpy as np
import pytest

from veechkit.induction import SectionSpec
from veechkit.rauzy import Path, parse_permutation
from veechkit.spectral import (
    BoundaryError,
    Branch,
    GridFunction,
    InverseMap,
    MarkovMapSpec,
    SpecError,
    SuspensionState,
    branch_contraction,
    dolgopyat_probe,
    doubling_spec,
    integrate,
    is_lebesgue_invariant,
    leading_eigen,
    linear_fit,
    norm_1t,
    rauzy_induced_spec,
    suspension_evolve,
    transfer_apply,
    validate_spec,
)

AB = parse_permutation("a b / b a")


def dense_transfer(spec, s, N):
    """Oracle: L_s as an explicit N x N matrix with linear interpolation."""
    x = np.linspace(0, 1, N)
    L = np.zeros((N, N), complex)
    for b in spec.branches:
        y = b.h(x)
        w = np.exp(-s * b.r(x)) * b.J(x)
        pos = y * (N - 1)
        k = np.clip(np.floor(pos).astype(int), 0, N - 2)
        f = pos - k
        L[np.arange(N), k] += w * (1 - f)
        L[np.arange(N), k + 1] += w * f
    return L


def test_validate_fixtures():
    assert validate_spec(doubling_spec()).passed
    rep = validate_spec(doubling_spec("sine"))
    assert rep.passed and rep.roof_floor >= math.log(2) - 0.3 - 1e-12 and rep.kappa == 2.0
    bad = MarkovMapSpec(
        (Branch((0.0, 1.0), InverseMap("affine", {"slope": 1.0, "shift": 0.0})),), None, "identity"
    )
    rep = validate_spec(bad)
    assert not rep.passed and rep.kappa == 1.0


def test_spec_json_round_trip(tmp_path):
    spec = doubling_spec("sine", amp=0.2)
    p = tmp_path / "spec.json"
    p.write_text(spec.dumps())
    back = MarkovMapSpec.load(p)
    assert back.to_json() == spec.to_json()
    doc = json.loads(spec.dumps())
    b0 = doc["branches"][0]
    assert set(b0) == {"image_interval", "inverse_map", "jacobian", "roof"}
    assert b0["inverse_map"]["kind"] == "affine"


def test_forward_and_boundaries():
    spec = doubling_spec()
    y, k = spec.forward(0.3)
    assert math.isclose(y, 0.6) and k == 0
    y, k = spec.forward(0.8)
    assert math.isclose(y, 0.6) and k == 1
    with pytest.raises(BoundaryError):
        spec.forward(0.5)


def test_transfer_fixtures():
    N = 1025
    spec = doubling_spec()
    one = GridFunction.constant(1.0, N)
    assert np.allclose(transfer_apply(spec, 0, one).values, 1.0, atol=1e-12)
    for sigma in (0.5, 1.0, 2.0):
        v = transfer_apply(spec, sigma, one).values
        assert np.allclose(v, 2.0**-sigma, atol=1e-12)
    u = GridFunction.from_callable(lambda x: x, N)
    v = transfer_apply(spec, 0, u)
    assert np.allclose(v.values, u.x / 2 + 0.25, atol=1e-12)


def test_transfer_matches_dense_oracle():
    N = 257
    spec = doubling_spec("sine")
    u = GridFunction.from_callable(lambda x: np.cos(3 * x) + x**2, N)
    s = 0.3 + 4j
    v = transfer_apply(spec, s, u).values
    ref = dense_transfer(spec, s, N) @ u.values
    # PCHIP versus linear interpolation: both O(N^-2) on smooth data
    assert np.max(np.abs(v - ref)) < 5e-4


def test_duality_on_random_functions():
    rng = np.random.default_rng(0)
    spec = doubling_spec("sine")
    N = 4096
    for _ in range(20):
        c = rng.normal(size=4)
        u = GridFunction.from_callable(lambda x: c[0] + c[1] * np.sin(2 * np.pi * x + c[2]) + c[3] * x**2, N)
        assert abs(transfer_apply(spec, 0, u).integral() - u.integral()) < 1e-8


def test_integrate_accuracy():
    x = np.linspace(0, 1, 4096)
    assert abs(integrate(np.exp(x)) - (math.e - 1)) < 1e-12
    assert abs(integrate(np.sin(7 * x)) - (1 - math.cos(7)) / 7) < 1e-12


def test_eigen_fixtures():
    e = leading_eigen(doubling_spec(), 0.0)
    assert abs(e.eigenvalue - 1) < 1e-8 and np.allclose(e.f.values, 1, atol=1e-6)
    for sigma in (0.3, 1.0):
        e = leading_eigen(doubling_spec(), sigma, N=512)
        assert abs(e.eigenvalue - 2**-sigma) < 1e-10 and np.allclose(e.f.values, 1, atol=1e-8)


def test_eigen_continuity_in_sigma():
    spec = doubling_spec("sine")
    gaps = [abs(leading_eigen(spec, s, N=512).eigenvalue - 1) for s in (0.2, 0.1, 0.05, 0.01)]
    assert all(a > b for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 0.02


def test_eigen_matches_dense_oracle():
    spec = doubling_spec("sine")
    N = 257
    e = leading_eigen(spec, 0.5, N=N)
    ev = np.linalg.eigvals(dense_transfer(spec, 0.5, N))
    assert abs(e.eigenvalue - ev[np.argmax(np.abs(ev))].real) < 1e-4


def test_norm_1t_fixtures():
    u = GridFunction.constant(3.0, 64)
    assert norm_1t(u, 7.0) == 3.0
    u = GridFunction.from_callable(lambda x: x, 1024)
    assert math.isclose(norm_1t(u, 10.0), 1.1, rel_tol=1e-9)
    assert math.isclose(norm_1t(u, 0.0), 2.0, rel_tol=1e-9)


def test_dolgopyat_fixtures():
    spec = doubling_spec()
    e = leading_eigen(spec, 0.7, N=512)
    res = dolgopyat_probe(spec, 0.7, 10, e.f)
    ref = [e.eigenvalue**k * e.f.l2() for k in range(11)]
    assert np.allclose(res.norms, ref, rtol=1e-8)
    res = dolgopyat_probe(doubling_spec("sine"), 20j, 40, GridFunction.constant(1.0, 4096))
    assert res.beta < 1 and res.r2 > 0.9


def test_suspension_fixtures():
    spec = doubling_spec(base=1.0)
    z = SuspensionState(1 / 3, 0.5)
    assert suspension_evolve(spec, z, 0.0) == (z, 0)
    out, n = suspension_evolve(spec, z, 1.0)
    assert n == 1 and math.isclose(out.x, 2 / 3) and math.isclose(out.a, 0.5)
    with pytest.raises(SpecError):
        suspension_evolve(spec, SuspensionState(0.1, 2.0), 1.0)


def test_suspension_semigroup():
    spec = doubling_spec("sine")
    z = SuspensionState(0.1234, 0.1)
    a, n1 = suspension_evolve(spec, z, 1.3)
    b, n2 = suspension_evolve(spec, a, 2.1)
    c, n = suspension_evolve(spec, z, 3.4)
    assert n == n1 + n2 and math.isclose(b.x, c.x, abs_tol=1e-9) and math.isclose(b.a, c.a, abs_tol=1e-9)


def test_lebesgue_invariance_flag():
    assert is_lebesgue_invariant(doubling_spec())
    sec = SectionSpec(Path(AB, "tb"))
    spec, _, _ = rauzy_induced_spec(sec, Fraction(1, 100))
    assert not is_lebesgue_invariant(spec)


def test_rauzy_induced_spec_fixture():
    sec = SectionSpec(Path(AB, "tb"))
    spec, branches, discarded = rauzy_induced_spec(sec, Fraction(1, 1000))
    assert 0 < len(branches) < 1000 and 0 <= discarded < 1
    x = np.linspace(0.001, 0.999, 257)
    for b in spec.branches:
        assert (b.r(x) >= math.log(2) - 1e-12).all()
    # r = ln(1/|h'|)/2: the roof is half the log-contraction of the branch
    for b in spec.branches:
        assert np.allclose(b.r(x), 0.5 * np.log(1 / np.abs(b.inverse.deriv(x))), atol=1e-10)
    rep = validate_spec(spec)
    assert rep.passed and rep.kappa > 1
    assert rep.coverage + float(discarded) == pytest.approx(1.0, abs=1e-9)


def test_branch_contraction_below_one():
    sec = SectionSpec(Path(AB, "tb"))
    _, branches, _ = rauzy_induced_spec(sec, Fraction(1, 200))
    rng = np.random.default_rng(1)
    for word, _ in branches[:5]:
        assert branch_contraction(sec, word, rng, 50) < 1


def test_linear_fit_exact_line():
    slope, icpt, r2 = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert math.isclose(slope, 2) and math.isclose(icpt, 1) and math.isclose(r2, 1)

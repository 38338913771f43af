"""Compare the compiled kernels with the numpy paths.

    python benchmarks/bench_kernels.py [--samples N] [--repeat R] [--json]

For each kernel the compiled version is timed in-process (after a warm-up
call), the vectorized numpy reference where one exists, and the same Python
source without compilation in a child process with VEECHKIT_DISABLE_NUMBA=1.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from veechkit import kernels as K
from veechkit._accel import backend
from veechkit.induction import SectionSpec, sample_section
from veechkit.montecarlo import _section_tables, sample_suspension
from veechkit.rauzy import symmetric_permutation
from veechkit.spectral import doubling_spec, kernel_arrays


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(samples):
    sec = SectionSpec.default(symmetric_permutation(2))
    rc, tab, loop, v0 = _section_tables(sec)
    lam, tau = sample_section(sec, np.random.default_rng(0), samples)
    args = (tab["next"], tab["winner"], tab["loser"], v0, loop, lam, tau, 100_000)
    spec = doubling_spec("sine")
    arrs = kernel_arrays(spec)
    x, a = sample_suspension(spec, np.random.default_rng(1), samples)
    grid = np.linspace(0, 8, 17)
    return {
        "section_return": (lambda: K.section_return_batch(*args), lambda: K.section_return_numpy(*args)),
        "psi_batch": (lambda: K.psi_batch(x, a, grid, *arrs, 0, 0, 2.0**-50), None),
        "correlation_sums": (
            lambda: K.correlation_sums(x, a, grid[:9], *arrs, 1, 1, 0.5, 0.15, 0, 0, 2.0**-50), None),
    }


def measure(samples, repeat, with_numpy=True):
    out = {}
    for name, (compiled, ref) in cases(samples).items():
        compiled()  # compile or warm caches
        row = {"kernel": _best(compiled, repeat)}
        if with_numpy and ref is not None:
            ref()
            row["numpy"] = _best(ref, repeat)
        out[name] = row
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    ns = ap.parse_args(argv)
    if ns.child:
        print(json.dumps(measure(ns.samples, 1, with_numpy=False)))
        return 0

    fast = measure(ns.samples, ns.repeat)
    # the uncompiled fallback is slow; time it on a tenth of the samples and scale
    small = max(100, ns.samples // 10)
    env = dict(os.environ, VEECHKIT_DISABLE_NUMBA="1")
    proc = subprocess.run([sys.executable, __file__, "--child", "--samples", str(small)],
                          env=env, capture_output=True, text=True, check=True)
    slow = json.loads(proc.stdout.strip().splitlines()[-1])
    rows = []
    for name, r in fast.items():
        fb = slow[name]["kernel"] * ns.samples / small
        rows.append({"kernel": name, "backend": backend(), "compiled_s": r["kernel"], "numpy_s": r.get("numpy"),
                     "fallback_s": fb, "speedup_vs_fallback": fb / r["kernel"],
                     "speedup_vs_numpy": (r["numpy"] / r["kernel"]) if "numpy" in r else None})
    if ns.json:
        print(json.dumps({"samples": ns.samples, "rows": rows}, indent=2))
        return 0
    print(f"samples={ns.samples} backend={backend()} (fallback timed on {small} samples and scaled)")
    print(f"{'kernel':<18}{'compiled s':>12}{'numpy s':>12}{'fallback s':>12}{'x numpy':>10}{'x fallback':>12}")
    for r in rows:
        num = f"{r['numpy_s']:.4f}" if r["numpy_s"] is not None else "-"
        xn = f"{r['speedup_vs_numpy']:.1f}" if r["speedup_vs_numpy"] is not None else "-"
        print(f"{r['kernel']:<18}{r['compiled_s']:>12.4f}{num:>12}{r['fallback_s']:>12.3f}{xn:>10}{r['speedup_vs_fallback']:>12.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

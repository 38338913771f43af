"""Command-line front end.

``veechkit <command> [args] [global flags]``; run ``veechkit -h`` for the list.
Every run prints one report document (JSON by default) and exits with 0 when
all bound checks pass and no budget ran out on a checked quantity.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction

from . import __version__
from . import report as R
from .induction import EXACT, F64, IetState, SectionSpec, ZipperedState, rauzy_orbit, veech_flow, zippered_orbit
from .rauzy import KINDS, Path, PermutationError, parse_permutation, rauzy_class, symmetric_permutation

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET, EXIT_ERROR = 0, 1, 2, 3, 4
STOCHASTIC = ("tails", "correlate")


class UsageError(ValueError):
    pass


# -- parameter types -----------------------------------------------------------


def _count(text: str) -> int:
    v = float(text)
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"{text!r} is not a non-negative integer")
    return int(v)


def _rational(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"{text!r} is not a rational") from e


def _rationals(text: str) -> tuple[Fraction, ...]:
    return tuple(_rational(t) for t in text.split(","))


def _letters(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"{text!r} is not a complex number") from e


def _mrange(text: str) -> tuple[int, int]:
    a, _, b = text.partition("..")
    return (int(a), int(b or a))


def _render(v) -> str:
    if isinstance(v, Fraction):
        return R.rational(v)
    if isinstance(v, complex):
        return repr(v).strip("()")
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and len(v) == 2 and all(isinstance(x, int) for x in v) and not isinstance(v[0], bool):
        return f"{v[0]}..{v[1]}"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    return str(v)


# (flag, type, default, help); a default of REQUIRED marks a mandatory flag
REQUIRED = object()
SCHEMAS: dict[str, dict] = {
    "class": {"perm": True, "flags": []},
    "diagram": {"perm": True, "flags": []},
    "induct": {"perm": True, "flags": [
        ("lambda", _rationals, REQUIRED, "lengths, comma separated"),
        ("steps", _count, 10, "number of Rauzy steps"),
    ]},
    "flow": {"perm": True, "flags": [
        ("lambda", _rationals, REQUIRED, "lengths"),
        ("tau", _rationals, None, "suspension data (default: cone witness scaled to area 1)"),
        ("factor", _rational, None, "exact flow factor e^t (exact precision)"),
        ("time", float, None, "flow time t (f64 precision)"),
        ("steps", _count, None, "zippered steps instead of a flow time"),
    ]},
    "measure": {"perm": True, "flags": [
        ("q", _rationals, None, "weight vector (default all ones)"),
        ("event", str, "length", "length | positive | complete"),
        ("n", _count, 2, "path length (length) or completeness k (complete)"),
    ]},
    "kerckhoff": {"perm": True, "flags": [
        ("alpha", str, REQUIRED, "letter that may not win"),
        ("T", _rational, REQUIRED, "growth factor T > 1"),
        ("q", _rationals, None, "weight vector (default all ones)"),
    ]},
    "distortion": {"perm": True, "flags": [
        ("subset", _letters, REQUIRED, "letters of A'"),
        ("M", _count, REQUIRED, "growth exponent"),
        ("m", _mrange, REQUIRED, "ceiling exponent or range lo..hi"),
        ("q", _rationals, None, "weight vector (default all ones)"),
    ]},
    "reduce": {"perm": True, "flags": [
        ("subset", _letters, REQUIRED, "letters of A'"),
        ("path", str, None, "colored path to reduce (kinds, e.g. tbt)"),
    ]},
    "tails": {"perm": False, "flags": [
        ("d", _count, None, "number of letters (symmetric permutation)"),
        ("perm", str, None, "starting permutation instead of --d"),
        ("gamma-star", str, None, "neat loop at the permutation (kinds)"),
        ("auto-gamma", bool, False, "use the shortest neat loop"),
        ("samples", _count, 100_000, "number of section points"),
        ("bin-width", float, 0.25, "survival bin width"),
        ("cap", _count, 100_000, "step cap per return"),
        ("streams", _count, 16, "independent RNG streams"),
    ]},
    "spectral": {"perm": False, "flags": [
        ("spec", str, None, "MarkovMapSpec JSON file"),
        ("builtin", str, "doubling-sine", "doubling | doubling-sine"),
        ("mode", str, "probe", "validate | eigen | transfer | probe"),
        ("sigma", float, 0.0, "real parameter for eigen"),
        ("s", _complex, complex(0, 20), "complex parameter for transfer/probe"),
        ("kmax", _count, 40, "iterations of the probe"),
        ("N", _count, 4096, "grid size"),
    ]},
    "correlate": {"perm": False, "flags": [
        ("spec", str, None, "MarkovMapSpec JSON file (affine branches)"),
        ("builtin", str, "doubling-sine", "doubling | doubling-sine"),
        ("samples", _count, 1_000_000, "Monte-Carlo samples"),
        ("t-max", float, 4.0, "largest time"),
        ("dt", float, 0.25, "time step"),
        ("observable", str, "bump", "bump | cos | height | const (used for U and V)"),
        ("streams", _count, 16, "independent RNG streams"),
    ]},
}


@dataclass
class CommandPlan:
    command: str
    params: dict
    output: str = "json"
    seed: int | None = None
    precision: str = EXACT
    depth: int | None = None
    mass_cutoff: Fraction | None = None
    threads: int = 1
    timing: bool = False
    defaults: list = field(default_factory=list)

    def __eq__(self, other):
        keys = ("command", "params", "output", "seed", "precision", "depth", "mass_cutoff", "threads", "timing")
        return isinstance(other, CommandPlan) and all(getattr(self, k) == getattr(other, k) for k in keys)

    def echo(self) -> dict:
        return {
            "command": self.command,
            "params": self.params,
            "out": self.output,
            "seed": self.seed,
            "precision": self.precision,
            "depth": self.depth,
            "mass_cutoff": self.mass_cutoff,
            "threads": self.threads,
            "defaults_filled": self.defaults,
        }


def _globals(p: argparse.ArgumentParser):
    g = p.add_argument_group("global flags")
    g.add_argument("--out", choices=("json", "csv", "dot"), default="json")
    g.add_argument("--seed", type=_count, default=None)
    g.add_argument("--threads", type=_count, default=None)
    g.add_argument("--precision", choices=(EXACT, F64), default=EXACT)
    g.add_argument("--depth", type=_count, default=None)
    g.add_argument("--mass-cutoff", type=_rational, default=None)
    g.add_argument("--timing", action="store_true", help="add wall_time to the report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="veechkit", description="Rauzy-Veech induction toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name)
        if schema["perm"]:
            sp.add_argument("perm", help='permutation, e.g. "a b c / c b a"')
        for flag, typ, default, hlp in schema["flags"]:
            dest = flag.replace("-", "_")
            if typ is bool:
                sp.add_argument(f"--{flag}", dest=dest, action="store_true", help=hlp)
            else:
                sp.add_argument(f"--{flag}", dest=dest, type=typ, default=None, help=hlp)
        _globals(sp)
    return p


def plan(argv) -> CommandPlan:
    """Parse and validate ``argv``; raises :class:`UsageError`."""
    ns = build_parser().parse_args(list(argv))
    if ns.command is None:
        raise UsageError("missing command")
    schema = SCHEMAS[ns.command]
    params: dict = {}
    filled = []
    if schema["perm"]:
        try:
            params["perm"] = parse_permutation(ns.perm).text()
        except PermutationError as e:
            raise UsageError(str(e)) from e
    for flag, typ, default, _ in schema["flags"]:
        v = getattr(ns, flag.replace("-", "_"))
        if v is None or (typ is bool and v is False):
            if default is REQUIRED:
                raise UsageError(f"missing required parameter --{flag}")
            if default is not None and default is not False:
                filled.append(flag)
            v = default
        if v is not None and v is not False:
            params[flag] = v
    _validate(ns.command, params)
    seed = ns.seed
    if ns.command in STOCHASTIC and seed is None:
        seed = 0
        filled.append("seed")
    threads = ns.threads
    if threads is None:
        env = os.environ.get("VEECHKIT_THREADS")
        threads = _count(env) if env else 1
    if ns.out == "dot" and ns.command not in ("class", "diagram"):
        raise UsageError("--out dot is only available for class and diagram")
    return CommandPlan(ns.command, params, ns.out, seed, ns.precision, ns.depth, ns.mass_cutoff, max(1, threads), ns.timing, filled)


def _validate(cmd: str, p: dict):
    if cmd == "tails":
        if "gamma-star" not in p and not p.get("auto-gamma"):
            raise UsageError("missing --gamma-star or --auto-gamma")
        if ("d" in p) == ("perm" in p):
            raise UsageError("give exactly one of --d or --perm")
    if cmd == "flow" and sum(k in p for k in ("factor", "time", "steps")) != 1:
        raise UsageError("give exactly one of --factor, --time or --steps")
    if cmd == "measure" and p["event"] not in ("length", "positive", "complete"):
        raise UsageError(f"unknown event {p['event']!r}")
    if cmd == "spectral" and p["mode"] not in ("validate", "eigen", "transfer", "probe"):
        raise UsageError(f"unknown mode {p['mode']!r}")
    if cmd in ("spectral", "correlate") and p.get("builtin") not in ("doubling", "doubling-sine"):
        raise UsageError(f"unknown builtin spec {p.get('builtin')!r}")
    if cmd == "correlate" and p["observable"] not in ("bump", "cos", "height", "const"):
        raise UsageError(f"unknown observable {p['observable']!r}")


def render_argv(pl: CommandPlan) -> list[str]:
    """Arguments that :func:`plan` maps back to ``pl``."""
    schema = SCHEMAS[pl.command]
    argv = [pl.command]
    if schema["perm"]:
        argv.append(pl.params["perm"])
    for flag, typ, _, _ in schema["flags"]:
        if flag not in pl.params:
            continue
        v = pl.params[flag]
        if typ is bool:
            if v:
                argv.append(f"--{flag}")
        else:
            argv += [f"--{flag}", _render(v)]
    argv += ["--out", pl.output, "--precision", pl.precision, "--threads", str(pl.threads)]
    if pl.seed is not None:
        argv += ["--seed", str(pl.seed)]
    if pl.depth is not None:
        argv += ["--depth", str(pl.depth)]
    if pl.mass_cutoff is not None:
        argv += ["--mass-cutoff", R.rational(pl.mass_cutoff)]
    if pl.timing:
        argv.append("--timing")
    return argv


# -- execution -----------------------------------------------------------------


@dataclass
class Outcome:
    result: dict
    checks: list = field(default_factory=list)  # (name, passed, budget_exhausted)
    csv: str | None = None
    dot: str | None = None


def _perm(pl):
    return parse_permutation(pl.params["perm"])


def _weights(pl, pi):
    q = pl.params.get("q") or (1,) * pi.d
    if len(q) != pi.d:
        raise UsageError(f"--q needs {pi.d} entries")
    return q


def _letter_index(pi, name):
    try:
        return pi.alphabet.index(name)
    except (KeyError, ValueError) as e:
        raise UsageError(f"unknown letter {name!r}") from e


def _conv(pl, xs):
    return tuple(xs) if pl.precision == EXACT else tuple(float(x) for x in xs)


def run_class(pl):
    rc = rauzy_class(_perm(pl))
    verts = [p.text() for p in rc.vertices]
    rows = [(i, v) for i, v in enumerate(verts)]
    return Outcome({"size": len(rc), "vertices": verts}, csv=R.table_csv(["index", "permutation"], rows), dot=rc.to_dot())


def run_diagram(pl):
    rc = rauzy_class(_perm(pl))
    edges = [
        {"from": rc.index[a.start], "to": rc.index[a.end], "kind": a.kind,
         "winner": a.start.name(a.winner), "loser": a.start.name(a.loser), "label": a.label()}
        for a in rc.arrows()
    ]
    rows = [(e["from"], e["to"], e["kind"], e["winner"], e["loser"]) for e in edges]
    return Outcome(
        {"nodes": [p.text() for p in rc.vertices], "edges": edges},
        csv=R.table_csv(["from", "to", "kind", "winner", "loser"], rows),
        dot=rc.to_dot(),
    )


def run_induct(pl):
    pi = _perm(pl)
    lam = pl.params["lambda"]
    if len(lam) != pi.d:
        raise UsageError(f"--lambda needs {pi.d} entries")
    tr = rauzy_orbit(IetState(_conv(pl, lam), pi), pl.params["steps"], pl.precision)
    steps = [
        {"kind": a.kind, "winner": a.start.name(a.winner), "loser": a.start.name(a.loser),
         "perm": st.perm.text(), "lambda": list(st.lengths)}
        for a, st in tr.steps
    ]
    return Outcome({"steps": steps, "word": tr.kinds, "tie": tr.tie, "logscale": tr.logscale}, csv=tr.to_csv())


def run_flow(pl):
    from .cocycle import height_vector, theta_cone

    pi = _perm(pl)
    lam = _conv(pl, pl.params["lambda"])
    if "tau" in pl.params:
        tau = _conv(pl, pl.params["tau"])
    else:
        w = theta_cone(pi).witness
        A = sum(l * h for l, h in zip(lam, height_vector(pi, w)))
        tau = tuple(x / A for x in _conv(pl, w))
    z = ZipperedState(lam, pi, tau)
    if "steps" in pl.params:
        tr = zippered_orbit(z, pl.params["steps"], pl.precision)
        end = tr.steps[-1][1] if tr.steps else z
        return Outcome({"state": end.to_json(), "steps": len(tr), "word": tr.kinds, "tie": tr.tie}, csv=tr.to_csv())
    if "factor" in pl.params:
        if pl.precision != EXACT:
            raise UsageError("--factor needs --precision exact")
        out, n = veech_flow(z, factor=pl.params["factor"])
    else:
        if pl.precision == EXACT:
            raise UsageError("--time needs --precision f64")
        out, n = veech_flow(z, pl.params["time"])
    return Outcome({"state": out.to_json(), "steps": n})


def run_measure(pl):
    from .cocycle import completeness, is_positive
    from .measure import Budget, EventSpec, family_measure

    pi = _perm(pl)
    q = _weights(pl, pi)
    ev, n = pl.params["event"], pl.params["n"]
    if ev == "length":
        event = EventSpec(emit=lambda g, w: len(g) >= n)
    elif ev == "positive":
        event = EventSpec(emit=lambda g, w: is_positive(g))
    else:
        event = EventSpec(emit=lambda g, w: completeness(g) >= n)
    budget = Budget(max_depth=pl.depth if pl.depth is not None else (n if ev == "length" else 16), mass_cutoff=pl.mass_cutoff)
    res = family_measure(pi, q, event, budget)
    out = {"measure": res.measure, "unresolved": res.unresolved, "exhausted": res.exhausted,
           "nodes_visited": res.nodes, "emitted": res.emitted}
    return Outcome(out)


def _bound_doc(statement, params, bc, extra=None):
    doc = {
        "statement": statement,
        "parameters": params,
        "exact_measure": bc.measure,
        "measure": bc.measure,
        "upper": bc.upper,
        "bound": bc.bound,
        "pass": bc.passed,
        "exhausted": bc.exhausted,
        "method": bc.method,
        "nodes_visited": bc.nodes,
    }
    doc.update(extra or {})
    return doc


def run_kerckhoff(pl):
    from .measure import kerckhoff_measure

    pi = _perm(pl)
    q = _weights(pl, pi)
    alpha = _letter_index(pi, pl.params["alpha"])
    bc = kerckhoff_measure(pi, q, alpha, pl.params["T"])
    doc = _bound_doc(
        "measure of minimal winner-avoiding paths with (Bq)_alpha > T q_alpha is below 1/T",
        {"perm": pi.text(), "q": q, "alpha": pl.params["alpha"], "T": pl.params["T"]},
        bc,
    )
    # an undecided certified run (bounds straddle 1/T) is a budget problem, not a failure
    undecided = not bc.passed and bc.measure < bc.bound
    return Outcome(doc, [("kerckhoff", bc.passed, undecided)])


def run_distortion(pl):
    from .measure import distortion_measure

    pi = _perm(pl)
    q = _weights(pl, pi)
    sub = [_letter_index(pi, x) for x in pl.params["subset"]]
    M = pl.params["M"]
    lo, hi = pl.params["m"]
    if not 0 <= lo <= hi <= M:
        raise UsageError("need 0 <= m <= M")
    rows = []
    checks = []
    for m in range(lo, hi + 1):
        res = distortion_measure(pi, q, sub, M, m)
        rows.append((m, res.measure, res.measure * 2**m, res.exhausted, res.nodes))
        checks.append((f"m={m}", True, not res.exhausted))
    doc = {
        "parameters": {"perm": pi.text(), "q": q, "subset": list(pl.params["subset"]), "M": M},
        "table": [{"m": m, "measure": v, "scaled": s, "exhausted": e, "nodes_visited": n} for m, v, s, e, n in rows],
    }
    return Outcome(doc, checks, csv=R.table_csv(["m", "measure", "2^m*measure"], [(m, v, s) for m, v, s, _, _ in rows]))


def run_reduce(pl):
    from .measure import decorate, drift, reduce_path, reduce_permutation

    pi = _perm(pl)
    sub = [_letter_index(pi, x) for x in pl.params["subset"]]
    rc = rauzy_class(pi)
    dc = decorate(rc, pi, sub)
    doc = {"kind": dc.kind, "members": len(dc.members), "type": dc.types[pi]}
    if dc.kind == "essential":
        doc["reduced"] = reduce_permutation(dc, pi).text()
        doc["arcs"] = [a.text() for a in dc.arcs()]
        if "path" in pl.params:
            doc["reduced_path"] = reduce_path(dc, Path(pi, pl.params["path"])).text()
    try:
        doc["drift"] = list(drift(pi, sub))
    except ValueError:
        doc["drift"] = None
    return Outcome(doc)


def _section(pl):
    if "perm" in pl.params:
        pi = parse_permutation(pl.params["perm"])
    else:
        pi = symmetric_permutation(pl.params["d"])
    if pl.params.get("auto-gamma"):
        return SectionSpec.default(pi)
    return SectionSpec(Path(pi, pl.params["gamma-star"]))


def run_tails(pl):
    from .montecarlo import tail_estimate

    sec = _section(pl)
    res = tail_estimate(
        sec, pl.params["samples"], pl.seed, streams=pl.params["streams"], threads=pl.threads,
        bin_width=pl.params["bin-width"], cap=pl.params["cap"],
    )
    doc = res.to_json()
    doc["perm"] = sec.perm.text()
    ok = bool(res.slope < 0 and res.min_r >= math.log(2))
    return Outcome(doc, [("negative slope and roof floor", ok, res.censored > 0)], csv=res.csv())


def _spec(pl):
    from .spectral import MarkovMapSpec, doubling_spec

    if pl.params.get("spec"):
        return MarkovMapSpec.load(pl.params["spec"])
    return doubling_spec("sine" if pl.params["builtin"] == "doubling-sine" else "constant")


def run_spectral(pl):
    from .spectral import GridFunction, dolgopyat_probe, leading_eigen, transfer_apply, validate_spec

    spec = _spec(pl)
    mode, N = pl.params["mode"], pl.params["N"]
    if mode == "validate":
        rep = validate_spec(spec)
        return Outcome(rep.to_json(), [("spec", rep.passed, False)])
    if mode == "eigen":
        e = leading_eigen(spec, pl.params["sigma"], N)
        f = e.f.values
        doc = {"eigenvalue": e.eigenvalue, "iterations": e.iterations, "gap": e.gap, "f_min": float(f.min()), "f_max": float(f.max())}
        return Outcome(doc, csv=R.table_csv(["x", "f"], zip(e.f.x, f)))
    u = GridFunction.constant(1.0, N)
    if mode == "transfer":
        v = transfer_apply(spec, pl.params["s"], u).values
        return Outcome({"s": pl.params["s"], "sup": float(abs(v).max())}, csv=R.table_csv(["x", "re", "im"], zip(u.x, v.real, getattr(v, "imag", 0 * v))))
    res = dolgopyat_probe(spec, pl.params["s"], pl.params["kmax"], u)
    return Outcome(res.to_json(), [("beta < 1", res.beta < 1, False)], csv=R.table_csv(["k", "l2"], enumerate(res.norms)))


def run_correlate(pl):
    import numpy as np

    from .montecarlo import correlation_estimate

    spec = _spec(pl)
    t = np.arange(0.0, pl.params["t-max"] + 1e-12, pl.params["dt"])
    obs = (pl.params["observable"], 0.5, 0.15)
    res = correlation_estimate(spec, obs, obs, t, pl.params["samples"], pl.seed, streams=pl.params["streams"], threads=pl.threads)
    ok = res.fit is not None and res.fit.rate > 0 and res.fit.excludes_zero
    return Outcome(res.to_json(), [("decay rate > 0, CI excludes 0", ok, res.fit is None)], csv=res.csv())


RUNNERS = {
    "class": run_class, "diagram": run_diagram, "induct": run_induct, "flow": run_flow,
    "measure": run_measure, "kerckhoff": run_kerckhoff, "distortion": run_distortion,
    "reduce": run_reduce, "tails": run_tails, "spectral": run_spectral, "correlate": run_correlate,
}


def run(pl: CommandPlan) -> tuple[str, int]:
    """Execute a plan; returns the rendered report and the exit code."""
    t0 = time.perf_counter()
    out = RUNNERS[pl.command](pl)
    passed = all(c[1] for c in out.checks)
    exhausted = any(c[2] for c in out.checks)
    code = EXIT_OK if passed and not exhausted else (EXIT_FAIL if not passed else EXIT_BUDGET)
    if pl.output == "dot":
        return out.dot, code
    if pl.output == "csv":
        if out.csv is None:
            raise UsageError(f"{pl.command} has no CSV table")
        return out.csv, code
    doc = {"schema": R.SCHEMA_VERSION, "version": __version__, "plan": pl.echo()}
    if pl.seed is not None and pl.command in STOCHASTIC:
        doc["rng"] = {"seed": pl.seed, "generator": "Philox", "streams": pl.params.get("streams")}
    doc["result"] = out.result
    doc["checks"] = [{"name": n, "pass": p, "budget_exhausted": e} for n, p, e in out.checks]
    doc["exit_code"] = code
    if pl.timing:
        doc["wall_time"] = time.perf_counter() - t0
    return R.dumps(doc), code


def _error_doc(code: str, message: str) -> str:
    return R.dumps({"schema": R.SCHEMA_VERSION, "version": __version__, "error": {"code": code, "message": message}})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        pl = plan(argv)
    except UsageError as e:
        sys.stderr.write(_error_doc("usage", str(e)))
        return EXIT_USAGE
    try:
        text, code = run(pl)
    except UsageError as e:
        sys.stderr.write(_error_doc("usage", str(e)))
        return EXIT_USAGE
    except (PermutationError, ValueError, ArithmeticError, RuntimeError) as e:
        sys.stderr.write(_error_doc(type(e).__name__, str(e)))
        return EXIT_ERROR
    sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

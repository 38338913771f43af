import json
import os
import subprocess
import sys
from fractions import Fraction

import pytest

from veechkit.cli import EXIT_BUDGET, EXIT_ERROR, EXIT_OK, EXIT_USAGE, UsageError, main, plan, render_argv

ABC = "a b c / c b a"
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

ARGVS = [
    ["class", ABC],
    ["diagram", "a b / b a", "--out", "dot"],
    ["induct", "a b / b a", "--lambda", "3/5,2/5", "--steps", "4"],
    ["flow", "a b / b a", "--lambda", "3/5,2/5", "--tau", "1,-1", "--factor", "2"],
    ["flow", "a b / b a", "--lambda", "0.6,0.4", "--time", "0.7", "--precision", "f64"],
    ["measure", ABC, "--event", "complete", "--n", "1"],
    ["kerckhoff", ABC, "--alpha", "a", "--T", "2", "--q", "1,2,3"],
    ["distortion", ABC, "--subset", "a", "--M", "3", "--m", "1..2"],
    ["reduce", ABC, "--subset", "a,c", "--path", "tt"],
    ["tails", "--d", "2", "--auto-gamma", "--samples", "2000", "--streams", "4"],
    ["spectral", "--builtin", "doubling", "--mode", "eigen", "--sigma", "0.5", "--N", "256"],
    ["correlate", "--builtin", "doubling-sine", "--samples", "2000", "--streams", "4", "--t-max", "1"],
]


def _main(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("argv", ARGVS, ids=[a[0] + str(i) for i, a in enumerate(ARGVS)])
def test_render_argv_round_trip(argv):
    pl = plan(argv)
    assert plan(render_argv(pl)) == pl


def test_plan_defaults_recorded():
    pl = plan(["induct", "a b / b a", "--lambda", "1,2"])
    assert pl.params["steps"] == 10 and "steps" in pl.defaults
    assert pl.params["lambda"] == (Fraction(1), Fraction(2))
    pl = plan(["tails", "--d", "2", "--gamma-star", "tb", "--samples", "1e6"])
    assert pl.params["samples"] == 1_000_000 and isinstance(pl.params["samples"], int)
    assert pl.seed == 0 and "seed" in pl.defaults
    assert plan(["class", ABC]).seed is None


def test_plan_usage_errors():
    bad = [
        [],
        ["class", "a b / a"],
        ["induct", "a b / b a"],
        ["tails", "--d", "2"],
        ["tails", "--d", "2", "--perm", "a b / b a", "--auto-gamma"],
        ["flow", "a b / b a", "--lambda", "1,2"],
        ["measure", ABC, "--event", "nope"],
        ["kerckhoff", ABC, "--alpha", "a", "--T", "2", "--out", "dot"],
        ["spectral", "--builtin", "tent"],
        ["class", ABC, "--bogus"],
    ]
    for argv in bad:
        with pytest.raises(UsageError):
            plan(argv)


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("VEECHKIT_THREADS", "3")
    assert plan(["class", ABC]).threads == 3
    assert plan(["class", ABC, "--threads", "2"]).threads == 2


def test_kerckhoff_report(capsys):
    code, out, _ = _main(["kerckhoff", ABC, "--alpha", "a", "--T", "2"], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["exit_code"] == 0
    res = doc["result"]
    assert res["exact_measure"] == "27/112" and res["bound"] == "1/2" and res["pass"]
    assert doc["plan"]["params"]["T"] == "2"
    assert "rng" not in doc and "wall_time" not in doc


def test_class_and_diagram(capsys):
    code, out, _ = _main(["class", ABC], capsys)
    assert code == 0 and json.loads(out)["result"]["size"] == 3
    code, out, _ = _main(["diagram", ABC, "--out", "dot"], capsys)
    assert out.startswith("digraph") and out.count("->") == 6


def test_reports_are_byte_identical(capsys):
    for argv in (["measure", ABC, "--n", "3"], ["tails", "--d", "2", "--auto-gamma", "--samples", "2000", "--streams", "4"]):
        a = _main(argv, capsys)[1]
        b = _main(argv + ["--threads", "1"], capsys)[1]
        assert a == b
    a = _main(["tails", "--d", "2", "--auto-gamma", "--samples", "2000", "--streams", "4", "--threads", "2"], capsys)[1]
    doc = json.loads(a)
    assert doc["rng"]["seed"] == 0 and doc["rng"]["generator"] == "Philox"


def test_timing_flag(capsys):
    doc = json.loads(_main(["class", ABC, "--timing"], capsys)[1])
    assert doc["wall_time"] >= 0


def test_csv_output(capsys):
    code, out, _ = _main(["induct", "a b / b a", "--lambda", "5,3", "--steps", "3", "--out", "csv"], capsys)
    assert code == 0 and out.splitlines()[0].startswith("step,kind")


def test_usage_error_document(capsys):
    code, out, err = _main(["tails", "--d", "2"], capsys)
    assert code == EXIT_USAGE and out == ""
    doc = json.loads(err)
    assert doc["error"]["code"] == "usage" and "gamma" in doc["error"]["message"]


def test_computation_error_exit_code(capsys):
    code, _, err = _main(["class", "a b / a b"], capsys)
    assert code == EXIT_ERROR and "reducible" in json.loads(err)["error"]["message"]
    # a tie in exact arithmetic stops the induction
    code, out, err = _main(["induct", "a b / b a", "--lambda", "1,1", "--steps", "3"], capsys)
    assert code in (EXIT_OK, EXIT_ERROR)
    code, out, err = _main(["flow", "a b / b a", "--lambda", "1,1", "--tau", "-1,1", "--steps", "2"], capsys)
    # tau outside the suspension cone is rejected as invalid input
    assert code in (EXIT_USAGE, EXIT_ERROR) and out == "" and json.loads(err)["error"]["code"]
    code, out, err = _main(["reduce", ABC, "--subset", "a,c", "--path", "tb"], capsys)
    assert code == EXIT_ERROR and "colored" in json.loads(err)["error"]["message"]


def test_budget_exit_code(capsys):
    code, out, _ = _main(["kerckhoff", ABC, "--alpha", "a", "--T", "2", "--depth", "1"], capsys)
    doc = json.loads(out)
    assert code == doc["exit_code"]
    assert code == EXIT_BUDGET or (code == EXIT_OK and not doc["result"]["exhausted"])


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "veechkit.cli", "class", "a b / b a"], capture_output=True, text=True,
                         env=dict(os.environ, PYTHONPATH=os.path.join(ROOT, "src")))
    assert out.returncode == 0 and json.loads(out.stdout)["result"]["size"] == 1


@pytest.mark.parametrize("argv", ARGVS[2:9] + ARGVS[10:11], ids=lambda a: a[0])
def test_every_command_runs(argv, capsys):
    code, out, err = _main(argv, capsys)
    assert code in (EXIT_OK, 1, EXIT_BUDGET), err
    assert out

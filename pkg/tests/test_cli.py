import json
import subprocess
import sys

import pytest

from rsjd.cli import config_hash, main

BENCH = "builtin:two_regime_benchmark"


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_simulate_writes_headers_and_is_worker_independent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    common = ["simulate", "--model", BENCH, "--seed", "7", "--n", "9000", "--h", "0.02", "--dump-paths", "2"]
    assert main([*common, "--out", str(a), "--workers", "1"]) == 0
    assert main([*common, "--out", str(b), "--workers", "2"]) == 0
    ta, tb = (a / "simulate.csv").read_bytes(), (b / "simulate.csv").read_bytes()
    assert ta == tb
    assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()
    lines = ta.decode().splitlines()
    assert lines[0].startswith("# rsjd ") and lines[1].startswith("# config_hash ")
    assert lines[2] == "# seed 7"
    assert "mean_weight" in ta.decode()


def test_pieced_simulation(tmp_path):
    assert _run(tmp_path, "simulate", "--model", BENCH, "--n", "2000", "--h", "0.01", "--switching", "pieced") == 0


@pytest.mark.parametrize(
    "args",
    [
        ["simulate", "--model", BENCH, "--n", "0"],
        ["simulate", "--model", "does/not/exist.json"],
        ["simulate", "--model", "builtin:nope"],
        ["simulate"],
        ["simulate", "--model", BENCH, "--seed", "-1"],
        ["bogus"],
        [],
    ],
)
def test_configuration_errors_exit_2(tmp_path, args, capsys):
    assert _run(tmp_path, *args) == 2
    assert "rsjd:" in capsys.readouterr().err or args == ["bogus"]


def test_n_paths_message(tmp_path, capsys):
    _run(tmp_path, "simulate", "--model", BENCH, "--n", "0")
    assert "n_paths must be >= 1" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = {"model": BENCH, "command": "simulate", "seed": 3, "params": {"n": 500, "h": 0.05}}
    p = tmp_path / "run.json"
    p.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(p), "--n", "600", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "simulate.csv").read_text()
    assert "# seed 3" in text
    bad = dict(cfg, params={"bogus": 1})
    p.write_text(json.dumps(bad))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2
    p.write_text(json.dumps(dict(cfg, extra=1)))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_config_hash_ignores_workers_and_out():
    a = {"model": "m", "command": "simulate", "params": {"n": 1}, "seed": 1, "workers": 1, "out": "x"}
    b = dict(a, workers=4, out="y")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(dict(a, seed=2))


def test_verify_writes_jsonl_and_report(tmp_path, capsys):
    rc = _run(tmp_path, "verify", "--model", BENCH, "--suite", "mean_one,disjointness", "--n", "2000", "--h", "0.01")
    assert rc == 0
    recs = [json.loads(l) for l in (tmp_path / "verdicts.jsonl").read_text().splitlines()]
    assert [r["check"] for r in recs] == ["mean_one", "disjointness"]
    assert all(r["runtime_ms"] is None and r["version"] and r["config_hash"] for r in recs)
    capsys.readouterr()
    assert main(["report", str(tmp_path / "verdicts.jsonl")]) == 0
    assert "2/2 checks pass" in capsys.readouterr().out


def test_report_exit_codes(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["report", str(empty)]) == 2
    assert "no checks" in capsys.readouterr().out
    mixed = tmp_path / "mixed.jsonl"
    mixed.write_text(
        json.dumps({"check": "a", "pass": True, "statistic": 0, "threshold": 1})
        + "\n"
        + json.dumps({"check": "b", "pass": False, "statistic": 2, "threshold": 1})
        + "\n"
    )
    assert main(["report", str(mixed)]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "<--" in out
    assert main(["report", str(tmp_path / "missing.jsonl")]) == 2


def test_couple_reflection_writes_tail(tmp_path):
    rc = _run(tmp_path, "couple", "--model", "builtin:brownian", "--kind", "reflection", "--r0", "0.1",
              "--n", "2000", "--h", "0.01", "--t-grid", "0.5", "1.0")
    assert rc == 0
    tail = (tmp_path / "tail.csv").read_text().splitlines()
    assert tail[4] == "t,surv_emp,se,tail_bound"
    coupling = (tmp_path / "coupling.csv").read_text().splitlines()
    assert coupling[4] == "t,mean_dist,se,analytic_bound,n_paths"
    assert len(coupling) == 7


def test_resolvent_methods(tmp_path):
    rc = _run(tmp_path, "resolvent", "--model", "builtin:constant_rate_two_state", "--alpha", "2",
              "--method", "all", "--n", "2000", "--h", "0.01", "--budget", "20", "--m-max", "4")
    assert rc == 0
    rows = (tmp_path / "resolvent.csv").read_text().splitlines()[5:]
    assert [r.split(",")[1] for r in rows] == ["direct", "pieced", "series"]
    assert all(r.endswith(",") for r in rows)  # runtime_ms blank without --timings


def test_resolvent_series_rejects_small_alpha(tmp_path):
    assert _run(tmp_path, "resolvent", "--model", BENCH, "--alpha", "1", "--method", "series", "--budget", "5") == 2


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "rsjd.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("rsjd ")

"""Command-line front end: ``rsjd simulate|verify|couple|resolvent|report``.

Exit codes: 0 success (all checks pass), 1 at least one check failed,
2 configuration or model error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .coupling import contraction_params, couple_ensemble, coupling_tail_bound, wasserstein_bound
from .engine import SimulationError, run_ensemble
from .estimate import MCEstimate
from .model import ModelError, ModelSpec
from .paths import dump_paths_csv, simulate_paths
from .semigroup import DIRECT, PIECED_WEIGHTED, ResolventQuery, TailError, alpha_one, resolvent_mc, resolvent_series
from .verify import multiple_testing_note, run_suite
from .zoo import BUILTINS, load_model, model_from_config

COMMANDS = ("simulate", "verify", "couple", "resolvent", "report")

# defaults of each command's parameter block
DEFAULTS = {
    "simulate": {"n": 10_000, "T": 1.0, "h": 1e-3, "x0": 0.0, "k0": 0, "switching": "direct", "dump_paths": 0},
    "verify": {"suite": "all", "n": 100_000, "T": 1.0, "h": 1e-3, "x0": 0.0, "k0": 0, "timings": False},
    "couple": {"kind": "synchronous", "k": 0, "x0": 0.0, "r0": 0.1, "t_grid": [0.25, 0.5, 1.0], "n": 10_000, "h": 1e-3},
    "resolvent": {
        "alpha": [], "method": "direct", "f": "regime", "l": 0, "x0": 0.0, "k0": 0,
        "n": 10_000, "h": 1e-3, "m_max": 10, "budget": 200, "timings": False,
    },
    "report": {"verdicts": None},
}


class ConfigError(Exception):
    """Invalid command line, run configuration or parameter block."""


def _schema(name):
    return json.loads(resources.files("rsjd").joinpath("schema", name).read_text())


# ----------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(cfg: dict) -> str:
    """Hash of the run-defining configuration (workers and output location excluded)."""
    key = {k: cfg[k] for k in ("model", "command", "params", "seed") if k in cfg}
    return hashlib.sha256(json.dumps(key, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _csv(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ----------------------------------------------------------------------------
# configuration


def _load_model(ref) -> ModelSpec:
    if isinstance(ref, dict):
        return model_from_config(ref)
    if ref is None:
        raise ConfigError("no model given (use --model FILE or builtin:NAME)")
    if isinstance(ref, str) and ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTINS:
            raise ModelError(f"unknown builtin model {name!r}; known: {', '.join(sorted(BUILTINS))}")
        return BUILTINS[name]()
    return load_model(ref)


def _x0(spec: ModelSpec, v):
    x = np.asarray(v, dtype=float).reshape(-1)
    if x.size == 1:
        return np.full(spec.d, float(x[0]))
    if x.size != spec.d:
        raise ConfigError(f"x0 needs {spec.d} coordinates")
    return x


def _positive_int(params, key):
    v = params[key]
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
        raise ConfigError(f"n_paths must be >= 1 (got {key} = {v!r})")
    return int(v)


def build_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
        try:
            jsonschema.validate(cfg, _schema("run.schema.json"))
        except jsonschema.ValidationError as e:
            raise ConfigError(f"run config invalid: {e.message}") from e
        if cfg.get("command", args.command) != args.command:
            raise ConfigError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    cfg["command"] = args.command
    if args.model is not None:
        cfg["model"] = args.model
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["out"] = args.out
    cfg.setdefault("seed", 0)
    cfg.setdefault("workers", 1)
    cfg.setdefault("out", ".")
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")
    params = dict(DEFAULTS[args.command])
    file_params = cfg.get("params", {})
    unknown = set(file_params) - set(params)
    if unknown:
        raise ConfigError(f"unknown {args.command} parameters: {', '.join(sorted(unknown))}")
    params.update(file_params)
    for key, val in vars(args).items():
        if key.startswith("p_") and val is not None:
            params[key[2:]] = val
    cfg["params"] = params
    return cfg


# ----------------------------------------------------------------------------
# commands


def _header(cfg, spec=None):
    lines = [f"rsjd {__version__}", f"config_hash {config_hash(cfg)}", f"seed {cfg['seed']}"]
    if spec is not None:
        lines.append(f"model {spec.name}")
    return lines


def cmd_simulate(cfg, out: Path) -> int:
    spec = _load_model(cfg.get("model"))
    p = cfg["params"]
    n = _positive_int(p, "n")
    if p["switching"] not in ("direct", "pieced"):
        raise ConfigError("switching must be 'direct' or 'pieced'")
    x0, k0 = _x0(spec, p["x0"]), int(p["k0"])
    mode = "thinned" if p["switching"] == "direct" else "hat"
    res = run_ensemble(spec, x0, k0, float(p["T"]), float(p["h"]), n, cfg["seed"], switching=mode, workers=cfg["workers"])
    w = res.weight() if mode == "hat" else np.ones(n)
    rows = []
    if n >= 2:
        for i in range(spec.d):
            e = MCEstimate.from_samples(w * res.x[:, i])
            rows.append([f"mean_x_{i + 1}", e.value, e.se])
        for l in range(spec.n0):
            e = MCEstimate.from_samples(w * (res.k == l))
            rows.append([f"p_regime_{l}", e.value, e.se])
        e = MCEstimate.from_samples(w)
        rows.append(["mean_weight", e.value, e.se])
        e = MCEstimate.from_samples(res.n_jump.astype(float))
        rows.append(["mean_jumps", e.value, e.se])
        e = MCEstimate.from_samples(res.n_switch.astype(float))
        rows.append(["mean_switches", e.value, e.se])
    atomic_write(out / "simulate.csv", _csv(_header(cfg, spec), ["statistic", "value", "se"], rows))
    m = int(p["dump_paths"])
    if m > 0:
        paths = simulate_paths(spec, x0, k0, float(p["T"]), float(p["h"]), min(m, n), cfg["seed"], switching=mode)
        atomic_write(out / "paths.csv", dump_paths_csv(paths, spec.d, _header(cfg, spec)))
    for r in rows:
        print(f"{r[0]:>16s} {r[1]: .6g} +- {r[2]:.2g}")
    return 0


def cmd_verify(cfg, out: Path) -> int:
    spec = _load_model(cfg.get("model"))
    p = cfg["params"]
    n = _positive_int(p, "n")
    t0 = time.perf_counter()
    reports = run_suite(spec, p["suite"], cfg["seed"], n, float(p["h"]), _x0(spec, p["x0"]), int(p["k0"]), float(p["T"]), cfg["workers"])
    h = config_hash(cfg)
    lines = []
    for r in reports:
        rec = json.loads(r.to_json(bool(p["timings"])))
        rec.update(version=__version__, config_hash=h)
        lines.append(json.dumps(rec, sort_keys=True))
    atomic_write(out / "verdicts.jsonl", "".join(l + "\n" for l in lines))
    note = multiple_testing_note(reports)
    if note:
        print(note, file=sys.stderr)
    _print_table([json.loads(l) for l in lines])
    if p["timings"]:
        print(f"total {1e3 * (time.perf_counter() - t0):.0f} ms", file=sys.stderr)
    return 0 if all(r.passed for r in reports) else 1


def cmd_couple(cfg, out: Path) -> int:
    spec = _load_model(cfg.get("model"))
    p = cfg["params"]
    n = _positive_int(p, "n")
    if n < 100:
        raise ConfigError("coupling curves need n >= 100 paths")
    k = int(p["k"])
    x0 = _x0(spec, p["x0"])
    e = np.zeros(spec.d)
    e[0] = 1.0
    r0 = float(p["r0"])
    t_grid = [float(t) for t in np.atleast_1d(p["t_grid"])]
    ens = couple_ensemble(spec, k, x0, x0 + r0 * e, t_grid, n, p["kind"], cfg["seed"], h=float(p["h"]), workers=cfg["workers"])
    rows = []
    for j, t in enumerate(t_grid):
        m = MCEstimate.from_samples(ens.dist[:, j])
        rows.append([t, m.value, m.se, wasserstein_bound(spec.rho, spec.H, r0, t), n])
    atomic_write(out / "coupling.csv", _csv(_header(cfg, spec), ["t", "mean_dist", "se", "analytic_bound", "n_paths"], rows))
    if p["kind"] == "reflection":
        params = contraction_params(spec, k)
        tail = []
        for t in t_grid:
            s = ens.survival(t)
            tail.append([t, s.value, s.se, coupling_tail_bound(params, r0, t) if t > 0 else 1.0])
        atomic_write(out / "tail.csv", _csv(_header(cfg, spec), ["t", "surv_emp", "se", "tail_bound"], tail))
    for r in rows:
        print(f"t={r[0]:g} mean_dist={r[1]:.6g} se={r[2]:.2g} bound={r[3]:.6g}")
    return 0


def cmd_resolvent(cfg, out: Path) -> int:
    spec = _load_model(cfg.get("model"))
    p = cfg["params"]
    n = _positive_int(p, "n")
    alphas = [float(a) for a in np.atleast_1d(p["alpha"])] or [max(alpha_one(spec), 1.0)]
    x0, k0, l = _x0(spec, p["x0"]), int(p["k0"]), int(p["l"])
    if p["f"] == "regime":
        f = lambda x, k: (k == l).astype(float)
    elif p["f"] == "one":
        f = lambda x, k: np.ones(x.shape[0])
    else:
        raise ConfigError("f must be 'regime' or 'one'")
    methods = ["direct", "pieced", "series"] if p["method"] == "all" else [p["method"]]
    for m in methods:
        if m not in ("direct", "pieced", "series"):
            raise ConfigError(f"unknown resolvent method {m!r}")
    rows = []
    for a in alphas:
        for m in methods:
            t0 = time.perf_counter()
            if m == "series":
                r = resolvent_series(spec, f, a, x0, k0, int(p["m_max"]), int(p["budget"]), cfg["seed"], h=float(p["h"]), workers=cfg["workers"])
                est, resid = r.estimate, r.residual_bound
            else:
                q = ResolventQuery(f, a, tuple(x0), k0, n, cfg["seed"], spec, h=float(p["h"]))
                est, resid = resolvent_mc(q, DIRECT if m == "direct" else PIECED_WEIGHTED, workers=cfg["workers"]), 0.0
            ms = 1e3 * (time.perf_counter() - t0) if p["timings"] else None
            rows.append([a, m, est.value, est.se, resid + est.bias_bound, ms])
    atomic_write(
        out / "resolvent.csv",
        _csv(_header(cfg, spec), ["alpha", "method", "estimate", "se", "residual_bound", "runtime_ms"], rows),
    )
    for r in rows:
        print(f"alpha={r[0]:g} {r[1]:>7s} {r[2]:.6g} +- {r[3]:.2g} (residual {r[4]:.2g})")
    return 0


def _print_table(recs) -> None:
    w = max([len(r.get("check", "")) for r in recs] + [5])
    print(f"{'check':<{w}}  {'result':<6}  {'statistic':>12}  {'threshold':>12}  anchor")
    for r in recs:
        mark = "PASS" if r.get("pass") else "FAIL"
        row = f"{r.get('check', '?'):<{w}}  {mark:<6}  {_num(r.get('statistic')):>12}  {_num(r.get('threshold')):>12}  {r.get('anchor', '')}"
        if not r.get("pass"):
            row = f"\x1b[1;31m{row}\x1b[0m" if sys.stdout.isatty() else f"{row}  <--"
        print(row)


def _num(v):
    try:
        return f"{float(v):.4g}"
    except (TypeError, ValueError):
        return str(v)


def cmd_report(cfg, out: Path) -> int:
    path = cfg["params"].get("verdicts")
    if not path:
        raise ConfigError("report needs a verdict file")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"verdict file not found: {p}")
    recs = []
    for i, line in enumerate(p.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            recs.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}:{i + 1}: not a JSON verdict: {e}") from e
    if not recs:
        print("no checks")
        return 2
    _print_table(recs)
    failed = sum(not r.get("pass") for r in recs)
    print(f"{len(recs) - failed}/{len(recs)} checks pass")
    return 1 if failed else 0


RUNNERS = {"simulate": cmd_simulate, "verify": cmd_verify, "couple": cmd_couple, "resolvent": cmd_resolvent, "report": cmd_report}


# ----------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def make_parser() -> argparse.ArgumentParser:
    def global_flags(suppress):
        # flags may come before or after the command; the subcommand copy must
        # not reset values given before it
        g = _Parser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
        g.add_argument("--model", help="model JSON file or builtin:NAME")
        g.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        g.add_argument("--workers", type=int, help="worker threads")
        g.add_argument("--out", help="output directory")
        g.add_argument("--config", help="run configuration JSON; flags override its fields")
        return g

    common = global_flags(True)
    p = _Parser(prog="rsjd", description=__doc__.splitlines()[0], parents=[global_flags(False)])
    p.add_argument("--version", action="version", version=f"rsjd {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate an ensemble")
    s.add_argument("--n", dest="p_n", type=int)
    s.add_argument("--T", dest="p_T", type=float)
    s.add_argument("--h", dest="p_h", type=float)
    s.add_argument("--x0", dest="p_x0", type=float, nargs="+")
    s.add_argument("--k0", dest="p_k0", type=int)
    s.add_argument("--switching", dest="p_switching", choices=["direct", "pieced"])
    s.add_argument("--dump-paths", dest="p_dump_paths", type=int, metavar="N")

    v = sub.add_parser("verify", parents=[common], help="run the verification suite")
    v.add_argument("--suite", dest="p_suite")
    v.add_argument("--n", dest="p_n", type=int)
    v.add_argument("--T", dest="p_T", type=float)
    v.add_argument("--h", dest="p_h", type=float)
    v.add_argument("--x0", dest="p_x0", type=float, nargs="+")
    v.add_argument("--k0", dest="p_k0", type=int)
    v.add_argument("--timings", dest="p_timings", action="store_const", const=True)

    c = sub.add_parser("couple", parents=[common], help="coupled-pair distance and tail curves")
    c.add_argument("--kind", dest="p_kind", choices=["synchronous", "reflection"])
    c.add_argument("--k", dest="p_k", type=int)
    c.add_argument("--x0", dest="p_x0", type=float, nargs="+")
    c.add_argument("--r0", dest="p_r0", type=float)
    c.add_argument("--t-grid", dest="p_t_grid", type=float, nargs="+")
    c.add_argument("--n", dest="p_n", type=int)
    c.add_argument("--h", dest="p_h", type=float)

    r = sub.add_parser("resolvent", parents=[common], help="resolvent estimates")
    r.add_argument("--alpha", dest="p_alpha", type=float, nargs="+")
    r.add_argument("--method", dest="p_method", choices=["direct", "pieced", "series", "all"])
    r.add_argument("--f", dest="p_f", choices=["regime", "one"])
    r.add_argument("--l", dest="p_l", type=int)
    r.add_argument("--x0", dest="p_x0", type=float, nargs="+")
    r.add_argument("--k0", dest="p_k0", type=int)
    r.add_argument("--n", dest="p_n", type=int)
    r.add_argument("--h", dest="p_h", type=float)
    r.add_argument("--m-max", dest="p_m_max", type=int)
    r.add_argument("--budget", dest="p_budget", type=int)
    r.add_argument("--timings", dest="p_timings", action="store_const", const=True)

    rp = sub.add_parser("report", parents=[common], help="summarize a verdict file")
    rp.add_argument("p_verdicts", metavar="VERDICTS", nargs="?")
    return p


def main(argv=None) -> int:
    try:
        parser = make_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError(f"a command is required: {', '.join(COMMANDS)}")
        cfg = build_config(args)
        return RUNNERS[args.command](cfg, Path(cfg["out"]))
    except ConfigError as e:
        print(f"rsjd: error: {e}", file=sys.stderr)
        return 2
    except (ModelError, SimulationError, TailError) as e:
        print(f"rsjd: model error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"rsjd: invalid parameter: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

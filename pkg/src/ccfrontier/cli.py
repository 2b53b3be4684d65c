"""Command line entry points: ``ccf run`` and ``ccf report``.

A run is configured by one JSON document::

    {
      "problem": {"name": "toy1d", "params": {}},
      "solver": {"N_MC": 10000, "alpha_low": 0.01},
      "seed": 42,
      "replicates": 1,
      "mode": "frontier",
      "bisect": {"target": 0.1587, "nu_low": 0.0, "nu_up": 3.0, "nu_tol": 0.01},
      "out": "runs/toy",
      "record_time": false
    }

Bounds in files and bisection brackets are in the problem's native
orientation (maximisation problems report the maximised value). With
``record_time`` false the ``time_s`` column is written as zero so repeated
runs are byte-identical.

Layout of the output directory::

    config.json                 resolved configuration
    replicate_<r>/frontier.csv  index,nu,alpha_point,alpha_upper,time_s
    replicate_<r>/sol_<i>.json  solution of point i
    replicate_<r>/envelope.csv  running-minimum envelope
    replicate_<r>/diagnostics.csv
    replicate_<r>/bisect.json   (bisect mode)
    replicate_<r>/done          written last
    summary.csv                 per-bound min/max certified risk over replicates
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (ContractError, InfeasibleError, InitializationError,
                     UnsupportedCapability)
from .frontier import monotone_envelope, solve_fixed_risk, trace_frontier
from .problems import make_problem
from .risk import joint_confidence
from .solver import RunConfig

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_REPORT = 4

FRONTIER_HEADER = ["index", "nu", "alpha_point", "alpha_upper", "time_s"]
DIAG_HEADER = ["point", "stage", "run", "n_iter", "gamma", "alpha_bar"]
_TOP_KEYS = {"problem", "solver", "seed", "replicates", "mode", "bisect",
             "out", "record_time"}
_BISECT_KEYS = {"target", "nu_low", "nu_up", "nu_tol"}


def _num(v):
    return repr(float(v))


def _fail(message, code, kind="error"):
    print(json.dumps({"error": message, "type": kind}), file=sys.stderr)
    return code


def resolve_config(doc, seed=None, out=None, replicates=None, mode=None):
    """Validate a config document and fill in every default.

    Raises ``ContractError`` on unknown keys or bad values.
    """
    if not isinstance(doc, dict):
        raise ContractError("config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    prob = doc.get("problem") or {}
    if isinstance(prob, str):
        prob = {"name": prob}
    extra = set(prob) - {"name", "params"}
    if extra:
        raise ContractError(f"unknown problem keys: {sorted(extra)}")
    name = prob.get("name")
    params = dict(prob.get("params") or {})
    make_problem(name, **params)  # validates name and parameters
    solver = RunConfig.from_dict(doc.get("solver") or {})

    res = {
        "problem": {"name": name, "params": params},
        "solver": solver.to_dict(),
        "seed": doc.get("seed", 0) if seed is None else seed,
        "replicates": doc.get("replicates", 1) if replicates is None else replicates,
        "mode": doc.get("mode", "frontier") if mode is None else mode,
        "out": doc.get("out") if out is None else out,
        "record_time": bool(doc.get("record_time", False)),
    }
    s = res["seed"]
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
        raise ContractError("seed must be an integer in [0, 2**64)")
    r = res["replicates"]
    if isinstance(r, bool) or not isinstance(r, int) or r < 1:
        raise ContractError("replicates must be a positive integer")
    if res["mode"] not in ("frontier", "bisect"):
        raise ContractError(f"unknown mode {res['mode']!r}")
    if not res["out"]:
        raise ContractError("no output directory given")
    bis = doc.get("bisect")
    if res["mode"] == "bisect":
        if not isinstance(bis, dict) or set(bis) != _BISECT_KEYS:
            raise ContractError(f"bisect mode needs keys {sorted(_BISECT_KEYS)}")
    if bis is not None:
        if set(bis) - _BISECT_KEYS:
            raise ContractError(f"unknown bisect keys: {sorted(set(bis) - _BISECT_KEYS)}")
        res["bisect"] = {k: float(v) for k, v in bis.items()}
    return res


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class _Persist:
    """Flushes a replicate's frontier files after every point."""

    def __init__(self, directory, problem, record_time):
        self.dir = directory
        self.problem = problem
        self.record_time = record_time
        self.written = 0

    def point_row(self, p):
        t = p.seconds if self.record_time else 0.0
        return [p.index, _num(self.problem.to_native(p.nu)), _num(p.alpha_point),
                _num(p.alpha_upper), _num(t)]

    def sol_doc(self, p):
        return {"index": p.index, "nu": self.problem.to_native(p.nu),
                "nu_min_form": p.nu, "x": [float(v) for v in p.x],
                "alpha_point": p.alpha_point, "alpha_upper": p.alpha_upper,
                "n_viol": p.n_viol, "n_samples": p.n_samples}

    def __call__(self, result):
        for p in result.points[self.written:]:
            _write_json(self.dir / f"sol_{p.index}.json", self.sol_doc(p))
        self.written = len(result.points)
        _write_csv(self.dir / "frontier.csv", FRONTIER_HEADER,
                   [self.point_row(p) for p in result.points])
        _write_csv(self.dir / "diagnostics.csv", DIAG_HEADER,
                   [[d["point"], d["stage"], d["run"], d["n_iter"],
                     _num(d["gamma"]), _num(d["alpha_bar"])]
                    for d in result.diagnostics])


def _run_replicate(res, r):
    problem = make_problem(res["problem"]["name"], **res["problem"]["params"])
    config = RunConfig(**res["solver"])
    directory = Path(res["out"]) / f"replicate_{r}"
    directory.mkdir(parents=True, exist_ok=True)
    for stale in directory.glob("*"):
        stale.unlink()
    if res["mode"] == "frontier":
        persist = _Persist(directory, problem, res["record_time"])
        result = trace_frontier(problem, config, seed=res["seed"], replicate=r,
                                on_point=persist)
        env = monotone_envelope(result)
        _write_csv(directory / "envelope.csv",
                   ["index", "nu", "alpha_point", "alpha_upper", "modified"],
                   [[p.index, _num(problem.to_native(p.nu)), _num(p.alpha_point),
                     _num(p.alpha_upper), int(p.modified)] for p in env.points])
        out = [(problem.to_native(p.nu), p.alpha_upper) for p in result.points]
    else:
        b = res["bisect"]
        lo, up = sorted((problem.from_native(b["nu_low"]),
                         problem.from_native(b["nu_up"])))
        bis = solve_fixed_risk(problem, b["target"], lo, up, b["nu_tol"], config,
                               seed=res["seed"], replicate=r)
        _write_json(directory / "bisect.json", {
            "nu": problem.to_native(bis.nu),
            "nu_min_form": bis.nu,
            "bracket_min_form": [bis.nu_low, bis.nu_up],
            "solves": bis.solves,
            "x": None if bis.x is None else [float(v) for v in bis.x],
            "history": [{k: (problem.to_native(v) if k == "nu" else v)
                         for k, v in h.items()} for h in bis.history],
        })
        out = [(problem.to_native(bis.nu), None)]
    (directory / "done").write_text("ok\n", encoding="utf-8")
    return out


def _workers(n):
    cap = os.environ.get("CCF_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, limit))


def _summary_rows(per_rep):
    table = {}
    for rows in per_rep:
        for nu, alpha in rows:
            table.setdefault(nu, []).append(alpha)
    out = []
    for nu in sorted(table):
        a = np.array(table[nu])
        ratio = a.max() / a.min() if a.min() > 0 else float("inf")
        out.append([_num(nu), len(a), _num(a.min()), _num(a.max()), _num(ratio)])
    return out


def run(res):
    """Execute a resolved config; returns per-replicate ``(nu, alpha)`` lists."""
    out = Path(res["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", res)
    reps = range(res["replicates"])
    n = _workers(res["replicates"])
    if n == 1:
        per_rep = [_run_replicate(res, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            per_rep = list(pool.map(_run_replicate, [res] * len(reps), reps))
    if res["mode"] == "frontier":
        _write_csv(out / "summary.csv",
                   ["nu", "replicates", "alpha_min", "alpha_max", "ratio"],
                   _summary_rows(per_rep))
    return per_rep


def _read_frontier(path):
    with open(path, encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def report(directory, stream=None):
    """Summarise a result directory; returns a dict of the statistics.

    Raises ``FileNotFoundError`` when there is nothing to report.
    """
    stream = stream or sys.stdout
    directory = Path(directory)
    reps = sorted(directory.glob("replicate_*"),
                  key=lambda p: int(p.name.split("_")[1]))
    reps = [p for p in reps if (p / "frontier.csv").exists() or (p / "bisect.json").exists()]
    if not reps:
        raise FileNotFoundError(f"no results in {directory}")
    delta = 1e-6
    expected = None
    cfg_path = directory / "config.json"
    if cfg_path.exists():
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
        delta = cfg.get("solver", {}).get("delta", delta)
        expected = cfg.get("replicates")
    partial = [p.name for p in reps if not (p / "done").exists()]
    if expected is not None and len(reps) < expected:
        partial.append(f"{expected - len(reps)} replicate(s) missing")
    if partial:
        print(f"warning: partial run ({', '.join(partial)})", file=sys.stderr)

    stats = {"replicates": [], "partial": bool(partial)}
    for rep in reps:
        if (rep / "frontier.csv").exists():
            rows = _read_frontier(rep / "frontier.csv")
            n_ef = len(rows)
            entry = {
                "name": rep.name,
                "points": n_ef,
                "total_seconds": sum(r["time_s"] for r in rows),
                "min_alpha_upper": min((r["alpha_upper"] for r in rows), default=None),
                "joint_confidence": joint_confidence(delta, n_ef),
                "curve": [(r["nu"], r["alpha_upper"]) for r in rows],
            }
        else:
            b = json.loads((rep / "bisect.json").read_text(encoding="utf-8"))
            entry = {"name": rep.name, "points": 1, "bisect_nu": b["nu"],
                     "solves": b["solves"], "joint_confidence": joint_confidence(delta, 1),
                     "curve": []}
        stats["replicates"].append(entry)

    for e in stats["replicates"]:
        if "bisect_nu" in e:
            print(f"{e['name']}: bisection nu={e['bisect_nu']!r} "
                  f"solves={e['solves']}", file=stream)
            continue
        print(f"{e['name']}: points={e['points']} total_seconds={e['total_seconds']:.3f} "
              f"min_alpha_upper={e['min_alpha_upper']!r} "
              f"joint_confidence={e['joint_confidence']!r}", file=stream)
    for e in stats["replicates"]:
        if e["curve"]:
            print(f"# {e['name']}: nu alpha_upper", file=stream)
            for nu, a in e["curve"]:
                print(f"{nu!r} {a!r}", file=stream)
    return stats


def build_parser():
    parser = argparse.ArgumentParser(prog="ccf", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="trace a frontier or bisect on a risk level")
    p_run.add_argument("--config", required=True, help="JSON config path")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--replicates", type=int)
    p_run.add_argument("--mode", choices=["frontier", "bisect"])
    p_rep = sub.add_parser("report", help="summarise a result directory")
    p_rep.add_argument("directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "report":
        try:
            report(args.directory)
        except FileNotFoundError as exc:
            return _fail(f"no results: {exc}", EXIT_REPORT, "NoResults")
        return 0
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        res = resolve_config(doc, seed=args.seed, out=args.out,
                             replicates=args.replicates, mode=args.mode)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read config: {exc}", EXIT_CONFIG, type(exc).__name__)
    except ContractError as exc:
        return _fail(str(exc), EXIT_CONFIG, "ContractError")
    try:
        run(res)
    except InitializationError as exc:
        print(json.dumps({"error": str(exc), "type": "InitializationError",
                          "diagnostics": exc.diagnostics}), file=sys.stderr)
        return EXIT_SOLVER
    except (ContractError, InfeasibleError, UnsupportedCapability) as exc:
        return _fail(str(exc), EXIT_SOLVER, type(exc).__name__)
    return 0


if __name__ == "__main__":
    sys.exit(main())

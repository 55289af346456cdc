"""Batch entry points: validate fleets, run scenarios, replay oracles, serve.

Exit codes are a stable contract for CI use: 0 when everything passed,
1 when a scenario check or replay oracle found a violation, 2 for usage
and input errors (missing files, malformed scenarios, bad flags).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .checks import cicd_violations, replay_firewall, run_checks
from .faults import ScenarioError, list_scenarios, load_scenario, scenario_path
from .sim import Simulation
from .topology import (
    TopologyError,
    load_default_fleet,
    load_topology,
    validate_topology,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

REPLAY_CHECKS = ("firewall", "cicd")


def _fail_usage(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _load_topo(path: str | None):
    if path is None:
        return load_default_fleet()
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return load_topology(path)


def _resolve_scenario(arg: str) -> Path:
    if arg in list_scenarios():
        return scenario_path(arg)
    p = Path(arg)
    if not p.exists():
        raise FileNotFoundError(
            f"{arg!r} is neither a shipped scenario {list_scenarios()} nor a file"
        )
    return p


def _seed_list(args) -> list[int | None]:
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s]
        except ValueError:
            raise ScenarioError(f"--seeds wants comma-separated integers, got {args.seeds!r}")
    if args.seed is not None:
        return [args.seed]
    env = os.environ.get("FLEETOPS_SEED")
    if env is not None:
        try:
            return [int(env)]
        except ValueError:
            raise ScenarioError(f"FLEETOPS_SEED must be an integer, got {env!r}")
    return [None]  # scenario file's own seed


# -- validate ----------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        topo = _load_topo(args.topology)
    except (OSError, json.JSONDecodeError, TopologyError) as exc:
        return _fail_usage(str(exc))
    violations = validate_topology(topo)
    for v in violations:
        print(f"{v.code} {v.subject}: {v.message}")
    print(
        f"{topo.name}: {len(topo.nodes)} nodes, {len(topo.links)} links, "
        f"{len(topo.systems)} systems, {len(violations)} violations"
    )
    return EXIT_OK if not violations else EXIT_CHECK_FAILED


# -- run ---------------------------------------------------------------------------


def _run_one(task: tuple) -> dict:
    scenario_file, topo_path, seed, out_root = task
    topo = _load_topo(topo_path)
    sc = load_scenario(Path(scenario_file), topo)
    sim = Simulation(sc, topo=topo, seed=seed)
    rep = sim.run()
    results = run_checks(sim)
    run = {
        "scenario": sc.name,
        "seed": sim.seed,
        "duration_s": sc.duration_s,
        "events": rep.events,
        "wall_s": round(rep.wall_s, 3),
        "trace_hash": rep.trace_hash,
        "checks": [
            {"name": r.name, "passed": r.passed, "detail": r.detail} for r in results
        ],
        "passed": all(r.passed for r in results),
        "out": None,
    }
    if out_root:
        out = Path(out_root) / f"{sc.name}-s{sim.seed}"
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "trace.json", "w", encoding="utf-8") as fh:
            json.dump(sim.trace_dict(), fh, sort_keys=True, separators=(",", ":"))
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(run, fh, indent=1, sort_keys=True)
        with open(out / "report.txt", "w", encoding="utf-8") as fh:
            fh.write(_report_text(run))
        with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
            for line in sim.store.export_lines():
                fh.write(line + "\n")
        run["out"] = str(out)
    return run


def _report_text(run: dict) -> str:
    lines = [
        f"scenario {run['scenario']} seed {run['seed']} "
        f"({run['duration_s']:.0f} s simulated, {run['events']} events, "
        f"{run['wall_s']:.2f} s wall)"
    ]
    for c in run["checks"]:
        lines.append(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    lines.append(f"trace {run['trace_hash']}")
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    try:
        scenario_file = _resolve_scenario(args.scenario)
        topo = _load_topo(args.topology)
        load_scenario(scenario_file, topo)  # surface input errors before forking
        seeds = _seed_list(args)
    except (OSError, json.JSONDecodeError, TopologyError, ScenarioError) as exc:
        return _fail_usage(str(exc))

    tasks = [(str(scenario_file), args.topology, seed, args.out) for seed in seeds]
    if len(tasks) > 1 and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            runs = list(pool.map(_run_one, tasks))
    else:
        runs = [_run_one(t) for t in tasks]

    if args.format == "json":
        json.dump({"runs": runs}, sys.stdout, indent=1, sort_keys=True)
        print()
    else:
        for run in runs:
            print(_report_text(run), end="")
            if run["out"]:
                print(f"wrote {run['out']}")
    return EXIT_OK if all(r["passed"] for r in runs) else EXIT_CHECK_FAILED


# -- replay ------------------------------------------------------------------------


def cmd_replay(args) -> int:
    trace_file = Path(args.trace_dir) / "trace.json"
    try:
        with open(trace_file, "r", encoding="utf-8") as fh:
            trace = json.load(fh)
        if args.check == "firewall":
            sound, complete = replay_firewall(trace)
            violations = sound + complete
        else:
            violations = cicd_violations(trace)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        return _fail_usage(f"cannot replay {trace_file}: {exc!r}")
    for v in violations:
        print(v)
    print(f"{args.check}: {len(violations)} violations in {trace_file}")
    return EXIT_OK if not violations else EXIT_CHECK_FAILED


# -- serve -------------------------------------------------------------------------


def cmd_serve(args) -> int:
    if args.pace <= 0:
        return _fail_usage("--pace must be > 0")
    try:
        topo = _load_topo(args.topology)
        sc = load_scenario(_resolve_scenario(args.scenario), topo)
    except (OSError, json.JSONDecodeError, TopologyError, ScenarioError) as exc:
        return _fail_usage(str(exc))
    from .api import serve
    from .monitor import MonitorConfig

    sim = Simulation(
        sc,
        topo=topo,
        seed=args.seed,
        monitor_config=MonitorConfig(eager_flush=True),
    )
    try:
        serve(sim, bind=args.bind, pace=args.pace)
    except ValueError as exc:
        return _fail_usage(str(exc))
    except (OSError, SystemExit) as exc:
        return _fail_usage(f"cannot serve on {args.bind}: {exc}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetops",
        description="Deterministic fleet-operations simulator.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="check a topology document against the design rules")
    p.add_argument("topology", nargs="?", help="topology JSON path (default: built-in fleet)")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="run a scenario to completion and evaluate its checks")
    p.add_argument("scenario", help=f"shipped name ({', '.join(list_scenarios())}) or JSON path")
    p.add_argument("--topology", help="topology JSON path (default: built-in fleet)")
    p.add_argument("--seed", type=int, help="override the scenario seed (or set FLEETOPS_SEED)")
    p.add_argument("--seeds", help="comma-separated seed list; one run per seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for --seeds")
    p.add_argument("--out", help="directory for trace.json, report, metrics export")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-run an offline oracle over a dumped trace")
    p.add_argument("trace_dir", help="directory containing trace.json from `run --out`")
    p.add_argument("check", choices=REPLAY_CHECKS)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("serve", help="drive a scenario in wall time and expose the HTTP API")
    p.add_argument("scenario", help="shipped name or JSON path")
    p.add_argument("--topology", help="topology JSON path (default: built-in fleet)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--bind", default="127.0.0.1:8177", help="HOST:PORT (default %(default)s)")
    p.add_argument("--pace", type=float, default=60.0,
                   help="simulated seconds per wall second (default %(default)s)")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

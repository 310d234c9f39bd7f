"""Command-line entry point: ``crowdflow run`` and ``crowdflow compare``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import runner
from . import scenario as scn
from .perception import STRATEGIES

EXIT_USAGE = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crowdflow", description="Macroscopic crowd simulations in batch mode.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write CSV output")
    r.add_argument("name", nargs="?", help="shipped preset name or path to a scenario file")
    r.add_argument("--scenario", help="scenario file (TOML)")
    r.add_argument("--strategy", choices=STRATEGIES)
    r.add_argument("--t-end", type=float)
    r.add_argument("--cfl", type=float)
    r.add_argument("--dump-every", type=float)
    r.add_argument("--out-dir", default=None, help="output directory (default: runs/<name>-<strategy>)")
    r.add_argument("--dump-potential", action="store_true")
    r.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set any scenario value, e.g. perception.theta=0.5 (repeatable)")

    c = sub.add_parser("compare", help="compare two run directories")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--metric", choices=runner.METRICS, default="diff")
    c.add_argument("--out", default=None, help="write the report as JSON to this file")
    return ap


def _flag_overrides(args) -> list[str]:
    out = []
    if args.strategy:
        out.append(f"perception.strategy='{args.strategy}'")
    if args.t_end is not None:
        out.append(f"t_end={args.t_end!r}")
    if args.cfl is not None:
        out.append(f"solver.cfl={args.cfl!r}")
    if args.dump_every is not None:
        out.append(f"output.dump_every={args.dump_every!r}")
    if args.dump_potential:
        out.append("output.dump_potential=true")
    if args.seed is not None:
        out.append(f"seed={args.seed}")
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in list(x)]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def cmd_run(args) -> int:
    source = args.scenario or args.name
    label = Path(source).stem if source else "scenario"
    out_dir = Path(args.out_dir) if args.out_dir else Path("runs") / f"{label}-{args.strategy or 'default'}"
    if not source:
        runner.write_error(out_dir, "usage", "give a preset name or --scenario FILE")
        print("error: give a preset name or --scenario FILE", file=sys.stderr)
        return EXIT_USAGE
    try:
        raw = scn.load(source)
        raw = scn.apply_overrides(raw, args.override + _flag_overrides(args))
        sc = scn.resolve(raw)
    except scn.ScenarioError as exc:
        runner.write_error(out_dir, "invalid-scenario", str(exc), exc.problems)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        res = runner.run(sc, out_dir)
    except runner.RunError as exc:
        runner.write_error(out_dir, exc.kind, str(exc), extra=_jsonable(exc.extra))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        runner.write_error(out_dir, "runtime", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out_dir}")
    for key in ("emptying_time", "mass_audit", "final_mass"):
        if key in res:
            print(f"  {key} = {res[key]:.6g}")
    return 0


def cmd_compare(args) -> int:
    try:
        report = runner.compare(args.run_a, args.run_b, args.metric)
    except runner.RunError as exc:
        payload = {"status": "error", "kind": exc.kind, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        if args.out:
            Path(args.out).write_text(json.dumps(payload, indent=2))
        return EXIT_USAGE
    report = _jsonable(report)
    series = report.pop("series", None)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        if series is not None:
            report["series"] = series
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_compare(args)


if __name__ == "__main__":
    sys.exit(main())

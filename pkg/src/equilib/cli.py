"""Command-line entry point: ``equilib <subcommand>``.

Every subcommand builds a one-operation config and runs it through the
suite runner, so single runs and bundled suites share the same report
format. Exit status: 0 all verdicts pass, 1 some verdict fails, 2 the
configuration is invalid.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import bundled_suites, dump_report, run_suite
from .errors import ConfigError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _json_arg(text: str):
    """A path to a JSON file, inline JSON, or a bare string."""
    if os.path.exists(text):
        with open(text) as fh:
            try:
                return json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"invalid JSON in {text}: {err}") from None
    s = text.strip()
    if s[:1] in "{[":
        try:
            return json.loads(s)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid inline JSON: {err}") from None
    return text


def _chart_arg(text):
    if text is None:
        return None
    doc = _json_arg(text)
    return {"kind": doc} if isinstance(doc, str) else doc


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _build(args) -> dict:
    cmd = args.command
    cfg = {"suite": f"cli-{cmd}", "seed": args.seed, "workers": args.workers}
    chart = _chart_arg(getattr(args, "chart", None))
    if chart is not None:
        cfg["chart"] = chart
    if cmd == "test":
        params = {"field": _json_arg(args.field), "samples": args.samples}
        if args.tol is not None:
            params["tol"] = args.tol
        if args.profiles:
            params["profiles"] = True
        ops = [{"op": "equilibrium", "params": params}]
    elif cmd == "fibers":
        params = {"field": _json_arg(args.field), "levels": _floats(args.levels), "grid": args.grid}
        if args.classify:
            params["expect_labels"] = ["sphere", "plane", "cylinder", "constant-principal-curvatures"]
        if args.export:
            params["export"] = args.export
        ops = [{"op": "fibers", "params": params}]
    elif cmd == "isometry":
        gens = _json_arg(args.gens)
        if isinstance(gens, dict):
            gens = gens.get("generators", gens)
        if isinstance(gens, str):
            from .isometry import catalog_subalgebras
            if gens not in catalog_subalgebras():
                raise ConfigError(f"--gens: not a file, JSON list or catalog subalgebra: {gens!r}")
            ops = [{"op": "isometry_catalog", "params": {"subalgebras": [gens], "profiles": [args.profile]}}]
        else:
            ops = [{"op": "isometry", "params": {"generators": gens, "profile": args.profile,
                                                 "expect": bool(args.check)}}]
    elif cmd == "arp":
        point = _floats(args.point)
        params = {"field": _json_arg(args.field), "point": point, "dimension": args.dimension or len(point),
                  "order": args.order, "half_width": args.half_width}
        if args.expect:
            params["expect"] = args.expect
        ops = [{"op": "arp", "params": params}]
    elif cmd == "fluid":
        params = {"index": args.index, "symmetry": args.symmetry, "rho_c": args.rho_c, "K": args.K,
                  "verify": bool(args.verify), "grid": args.grid}
        if args.csv:
            params["csv"] = args.csv
        ops = [{"op": "fluid", "params": params}]
    else:
        raise ConfigError(f"unknown command {cmd!r}")
    cfg["operations"] = ops
    return cfg


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equilib", description="Equilibrium partitions toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--report", help="write the JSON report here")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)

    t = sub.add_parser("test", help="equilibrium predicate on a sample cloud")
    t.add_argument("--chart", help="chart JSON file, inline JSON or chart kind")
    t.add_argument("--field", required=True, help="field JSON file or descriptor")
    t.add_argument("--samples", type=int, default=2000)
    t.add_argument("--tol", type=float)
    t.add_argument("--profiles", action="store_true", help="also recover ω(f), ψ(f)")
    common(t)

    f = sub.add_parser("fibers", help="extract and classify level sets")
    f.add_argument("--chart")
    f.add_argument("--field", default="norm_sq")
    f.add_argument("--levels", required=True, help="comma-separated levels")
    f.add_argument("--grid", type=int, default=64)
    f.add_argument("--classify", action="store_true")
    f.add_argument("--export", help="directory for OFF meshes and JSON sidecars")
    common(f)

    i = sub.add_parser("isometry", help="invariance check for a subalgebra of Killing fields")
    i.add_argument("--gens", required=True, help="JSON file/list of generators or a catalog name")
    i.add_argument("--profile", default="t")
    i.add_argument("--check", action="store_true", help="require the invariance checks to hold")
    common(i)

    a = sub.add_parser("arp", help="analytic-representability diagnostic along a transversal")
    a.add_argument("--field", required=True)
    a.add_argument("--point", required=True, help="comma-separated boundary point")
    a.add_argument("--dimension", type=int)
    a.add_argument("--order", type=int, default=8)
    a.add_argument("--half-width", type=float, default=0.5)
    a.add_argument("--expect", choices=["candidate-analytic", "flat-defect", "inconclusive"])
    common(a)

    fl = sub.add_parser("fluid", help="self-gravitating polytrope with matched exterior")
    fl.add_argument("--index", type=float, default=1.0)
    fl.add_argument("--symmetry", default="spherical", help="spherical, cylindrical, planar or 2/1/0")
    fl.add_argument("--rho-c", type=float, default=1.0)
    fl.add_argument("--K", type=float, default=1.0)
    fl.add_argument("--verify", action="store_true")
    fl.add_argument("--grid", type=int, default=64)
    fl.add_argument("--csv", help="write r, V, rho, p to this CSV file")
    common(fl)

    s = sub.add_parser("suite", help="run a config file or a bundled suite")
    s.add_argument("name", nargs="?", help="config path or bundled suite name")
    s.add_argument("--list", action="store_true", help="list bundled suites")
    common(s)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "suite":
            if args.list or not args.name:
                for name, doc in sorted(bundled_suites().items()):
                    print(f"{name}: {doc.get('description', '')}")
                return EXIT_PASS
            cfg = args.name
            report = run_suite(cfg, args.report)
        else:
            report = run_suite(_build(args), args.report)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.report is None:
        print(dump_report(report))
    for r in report["results"]:
        status = "PASS" if r["passed"] else "FAIL"
        extra = f"  {r['error']}" if "error" in r else ""
        print(f"{status} {r['id']}{extra}", file=sys.stderr)
    return EXIT_PASS if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: classify, zones, mode, sweep, check, all."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness, modes

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SWEEP_CHECKS = ["energy", "quadrature"]


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required,
                   help="scenario JSON path or bundled scenario name (e.g. t41_increasing_g)")
    p.add_argument("--out", type=Path, default=None, help="directory for report files (default: stdout)")
    p.add_argument("--workers", type=int, default=harness.default_workers(),
                   help="worker processes for the mode sweep (default: CPU count)")
    p.add_argument("--tol", type=float, default=None, help="override tolerances.rel_tol")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None,
                   help="kernel driver (default: DAMPWAVE_BACKEND or numba)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dampwave",
                                     description="Damped wave equations with time-dependent friction and "
                                                 "viscoelastic damping: classification, zones, mode solves "
                                                 "and envelope checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="friction class and hypothesis sets of the scenario")
    _add_common(p)
    p = sub.add_parser("zones", help="zone layout, separating times and zone chains")
    _add_common(p)
    p = sub.add_parser("mode", help="solve one Fourier mode on the scenario time grid")
    _add_common(p)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--u0", type=float, default=1.0)
    p.add_argument("--u1", type=float, default=0.0)
    p = sub.add_parser("sweep", help="mode sweep over the data band with norms and envelopes")
    _add_common(p)
    p = sub.add_parser("check", help="run the scenario's checks (or a selection)")
    _add_common(p, config_required=False)
    p.add_argument("--list", action="store_true", help="list check ids and exit")
    p.add_argument("--only", action="append", default=None, metavar="ID",
                   help="run only this check id (repeatable or comma separated)")
    p = sub.add_parser("all", help="classify, zones, sweep and every check; JSON plus CSV with --out")
    _add_common(p)
    return parser


def _load(args) -> harness.Scenario:
    overrides = None if args.tol is None else {"tolerances": {"rel_tol": args.tol}}
    return harness.load_scenario(args.config, overrides)


def _write(text: str, out: Path | None, name: str):
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    print(f"wrote {out / name}", file=sys.stderr)


def _dump(obj) -> str:
    return json.dumps(harness._clean(obj), indent=2, allow_nan=False) + "\n"


def cmd_classify(args) -> int:
    sc = _load(args)
    cls = harness.run_classification(sc)
    if args.format == "json":
        _write(_dump({"version": __version__, "scenario": sc.name, "classification": cls}), args.out,
               "classification.json")
    else:
        rows = [("friction", "", cls["friction"]["kind"], "")]
        for set_id, rep in cls["conditions"].items():
            for cid, v in rep["verdicts"].items():
                rows.append((set_id, cid, v["status"], v.get("constant")))
        _write(harness.csv_text(("set", "condition", "status", "constant"), rows), args.out, "classification.csv")
    for reason in cls["reasons"]:
        print(f"hypothesis violation: {reason}", file=sys.stderr)
    return EXIT_OK if cls["matches"] else EXIT_FAIL


def cmd_zones(args) -> int:
    sc = _load(args)
    summary = harness.zone_summary(sc)
    if args.format == "json":
        summary["curves"] = [{"xi": xi, "curve": c, "time": t} for xi, c, t in harness.zone_curves(sc)]
        _write(_dump({"version": __version__, "scenario": sc.name, "zones": summary}), args.out, "zones.json")
    else:
        rows = []
        for xi, chain in summary["chains"].items():
            if isinstance(chain, list):
                rows.extend((xi, iv["zone"], iv["start"], iv["end"]) for iv in chain)
        _write(harness.csv_text(("xi", "zone", "start", "end"), rows), args.out, "zone_chains.csv")
        if args.out is not None:
            _write(harness.csv_text(("xi", "curve", "time"), harness.zone_curves(sc)), args.out, "zones.csv")
    bad = [xi for xi, chain in summary["chains"].items() if not isinstance(chain, list)]
    for xi in bad:
        print(f"zone chain failed at xi={xi}: {summary['chains'][xi]['error']}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


def cmd_mode(args) -> int:
    sc = _load(args)
    b, g = sc.profiles()
    t = sc.t_grid()
    sol = modes.solve_mode(b, g, args.xi, args.u0, args.u1, t, sc.tolerances["rel_tol"], args.backend)
    md = {"xi": np.array([sol.xi]), "t": sol.t_grid, "u_hat": sol.u_hat[:, None], "ut_hat": sol.ut_hat[:, None]}
    rows = list(harness.mode_table(md, sc))
    if args.format == "json":
        body = {"version": __version__, "scenario": sc.name, "xi": sol.xi, "u0": args.u0, "u1": args.u1,
                "stats": sol.stats, "energy_residual": sol.energy_residual,
                "energy_monotone": sol.energy_monotone(sc.tolerances["energy_factor"]),
                "series": {k: [r[i] for r in rows] for i, k in enumerate(harness.MODE_HEADER)}}
        _write(_dump(body), args.out, "mode.json")
    else:
        _write(harness.csv_text(harness.MODE_HEADER, rows), args.out, "modes.csv")
    return EXIT_OK


def _summarise(report: harness.CheckReport):
    for cid, r in report.checks.items():
        print(f"{cid}: {r.get('verdict')}", file=sys.stderr)
    line = f"overall: {report.overall}"
    if report.reason:
        line += f" ({report.reason})"
    print(line, file=sys.stderr)


def _exit_code(report: harness.CheckReport) -> int:
    if report.numerical_failure:
        return EXIT_NUMERICAL
    return EXIT_OK if report.passed else EXIT_FAIL


def _emit(report, sc, args, both: bool = False) -> None:
    if args.out is None:
        if args.format == "json":
            sys.stdout.write(harness.report_json(report))
        else:
            sys.stdout.write(harness.csv_text(("id", "verdict", "detail"),
                                              ((c, r.get("verdict", ""), r.get("detail", ""))
                                               for c, r in report.checks.items())))
        return
    formats = ("json", "csv") if both else (args.format,)
    for fmt in formats:
        for path in harness.emit(report, fmt, args.out, sc):
            print(f"wrote {path}", file=sys.stderr)


def _run(args, checks, both=False) -> int:
    sc = _load(args)
    report = harness.run_scenario(sc, workers=max(1, args.workers), checks=checks, backend=args.backend)
    _emit(report, sc, args, both)
    _summarise(report)
    return _exit_code(report)


def cmd_sweep(args) -> int:
    return _run(args, SWEEP_CHECKS)


def cmd_check(args) -> int:
    if args.list:
        for cid, text in harness.list_checks():
            print(f"{cid:32s} {text}")
        return EXIT_OK
    if not args.config:
        raise harness.ScenarioError("check needs --config (or --list)")
    only = None
    if args.only:
        only = [c.strip() for item in args.only for c in item.split(",") if c.strip()]
        unknown = sorted(set(only) - set(harness.CHECKS))
        if unknown:
            raise harness.ScenarioError(f"unknown checks {unknown}; see 'check --list'")
    return _run(args, only)


def cmd_all(args) -> int:
    return _run(args, None, both=True)


COMMANDS = {"classify": cmd_classify, "zones": cmd_zones, "mode": cmd_mode, "sweep": cmd_sweep,
            "check": cmd_check, "all": cmd_all}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "tol", None) is not None and not args.tol > 0:
        print("error: --tol must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except harness.ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except modes.ModeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

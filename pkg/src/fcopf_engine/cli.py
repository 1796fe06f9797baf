"""``fcopf-engine`` command line.

Exit codes: 0 success, 1 input error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .fcopf import DEFAULT_WEIGHTS, solve_fcopf
from .netmodel import Network, NetworkError, build_cigre_lv_fixture, load_network
from .opf import OpfBuildError, solve_opf
from .powerflow import PowerFlowError, full_dispatch, run_power_flow
from .results import StudyResult, natural_key
from .shortcircuit import ShortCircuitError, fault_studies

log = logging.getLogger("fcopf_engine")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2
BOUND_SLACK = 0.005


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are input errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _network(args) -> Network:
    if args.network and args.fixture:
        raise InputError("give either a network file or --fixture, not both")
    if args.seed is not None and args.fixture != "random":
        raise InputError("--seed only applies to --fixture random")
    if args.fixture == "cigre-lv":
        return build_cigre_lv_fixture()
    if args.fixture == "random":
        from .synthetic import random_network

        return random_network(args.seed if args.seed is not None else 0)
    if not args.network:
        raise InputError("no network given (path or --fixture cigre-lv)")
    try:
        return load_network(args.network)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    except NetworkError as exc:
        where = f" at {exc.path}" if exc.path else ""
        raise InputError(f"{args.network}: {exc}{where}") from None


def _pf_diag(st) -> dict:
    return {"status": "Converged", "iterations": st.iterations, "max_residual": st.max_residual}


def run_study(kind: str, net: Network, args) -> tuple[StudyResult, bool]:
    """Run one study; the flag says whether it succeeded."""
    if kind in ("pf", "sc"):
        label = "No-DG" if args.no_dg else "max-DG"
        dispatch = None if args.no_dg else full_dispatch(net, reactive=True)
        st = run_power_flow(net, dispatch, tol=args.tol if args.tol is not None else 1e-8,
                            max_iter=args.max_iter if args.max_iter is not None else 50)
        studies = fault_studies(net, st) if kind == "sc" else None
        res = StudyResult.from_state(kind, net, st, fault_results=studies, meta={"label": label})
        res.diagnostics = _pf_diag(st)
        return res, True
    tol = args.tol if args.tol is not None else 1e-6
    if kind == "opf":
        res = solve_opf(net, tol=tol, max_iter=args.max_iter or 150)
        res.meta["label"] = "OPF"
    else:
        weights = (args.w_cost, args.w_fault)
        res = solve_fcopf(net, weights, hard_cap=args.hard_cap, tol=tol, max_iter=args.max_iter or 200)
        res.meta["label"] = "FC-OPF"
    return res, res.status == "Optimal"


def _clean(v: float, digits: int) -> float:
    return round(v, digits) + 0.0  # no "-0.000"


def _fmt_v(m, a):
    return f"{m:.4f}∠{a:7.2f}°"


def print_study(res: StudyResult, out=None):
    out = out or sys.stdout
    label = res.meta.get("label", res.kind)
    print(f"{label} study of {res.network or 'network'}", file=out)
    if res.diagnostics:
        d = res.diagnostics
        print(f"  status {d['status']}, {d['iterations']} iterations", file=out)
    print("\nBus voltages", file=out)
    for r in res.voltages:
        cells = "  ".join(f"{p}: {_fmt_v(m, a)}" for p, m, a in zip(r.phases, r.magnitude_pu, r.angle_deg))
        print(f"  {r.bus:>6}  {cells}", file=out)
    if res.faults:
        print("\nFault currents (A)", file=out)
        for r in res.faults:
            cells = "  ".join(f"{p}: {a:9.1f}" for p, a in zip(r.phases, r.current_a))
            print(f"  {r.fault_id:>6} @ {r.bus:>5}  {cells}", file=out)
        print(f"  total {res.total_fault_a:.1f}", file=out)
    print("\nDispatch", file=out)
    for r in res.dispatch:
        p, q, c = (_clean(v, 3) for v in (sum(r.p_kw), sum(r.q_kvar), r.cost))
        print(f"  {r.generator:>14}  {p:9.3f} kW  {q:9.3f} kvar  cost {c:8.2f}", file=out)
    print(f"  total cost {res.total_cost:.2f}", file=out)
    if res.objective:
        print("\nObjective", file=out)
        for k, v in res.objective.items():
            print(f"  {k}: {v}", file=out)


def compare_results(results: Sequence[StudyResult], labels: Sequence[str]) -> dict:
    """Side-by-side tables with deltas against the first result."""
    if len(results) < 2:
        raise InputError("compare needs at least two result files")
    bus_sets = [{r.bus for r in res.voltages} for res in results]
    if any(b != bus_sets[0] for b in bus_sets[1:]):
        diff = set().union(*bus_sets) - set.intersection(*bus_sets)
        raise InputError(f"results come from different networks; mismatched buses: {sorted(diff, key=natural_key)}")

    voltages = []
    for row in results[0].voltages:
        for p in row.phases:
            vals = []
            for res in results:
                r = next(v for v in res.voltages if v.bus == row.bus)
                vals.append(r.magnitude_pu[r.phases.index(p)])
            voltages.append({"bus": row.bus, "phase": p, "values": vals, "delta": [v - vals[0] for v in vals]})

    bounds_from = [k for k, res in enumerate(results) if res.kind == "sc"]
    faults = []
    keys = []
    for res in results:
        for r in res.faults:
            for p in r.phases:
                if (r.fault_id, r.bus, p) not in keys:
                    keys.append((r.fault_id, r.bus, p))
    for fid, bus, p in keys:
        vals = []
        for res in results:
            r = next((f for f in res.faults if f.fault_id == fid and f.bus == bus), None)
            vals.append(None if r is None else r.current_a[r.phases.index(p)])
        entry = {"fault_id": fid, "bus": bus, "phase": p, "values": vals, "annotations": [None] * len(vals)}
        ref = [vals[k] for k in bounds_from if vals[k] is not None]
        if len(ref) >= 2:
            lo, hi = min(ref), max(ref)
            for k, v in enumerate(vals):
                if v is not None and k not in bounds_from:
                    inside = lo * (1 - BOUND_SLACK) <= v <= hi * (1 + BOUND_SLACK)
                    entry["annotations"][k] = "within bounds" if inside else "OUT OF BOUNDS"
        faults.append(entry)

    gens = [r.generator for r in results[0].dispatch]
    dispatch = []
    for gid in gens:
        vals = []
        for res in results:
            r = next((d for d in res.dispatch if d.generator == gid), None)
            vals.append(None if r is None else sum(r.p_kw))
        dispatch.append({"generator": gid, "p_kw": vals})
    return {
        "columns": list(labels),
        "voltages": voltages,
        "faults": faults,
        "dispatch": dispatch,
        "costs": [res.total_cost for res in results],
        "bound_violations": sum(a == "OUT OF BOUNDS" for f in faults for a in f["annotations"]),
    }


def print_comparison(cmp: dict, out=None):
    out = out or sys.stdout
    cols = cmp["columns"]
    width = max(12, *(len(c) + 2 for c in cols))
    head = "".join(f"{c:>{width}}" for c in cols)
    print(f"{'bus':>8} ph{head}", file=out)
    for v in cmp["voltages"]:
        print(f"{v['bus']:>8} {v['phase']} " + "".join(f"{x:>{width}.4f}" for x in v["values"]), file=out)
    print(f"\n{'fault':>8} ph{head}", file=out)
    for f in cmp["faults"]:
        cells = "".join(f"{'-':>{width}}" if x is None else f"{x:>{width}.1f}" for x in f["values"])
        notes = ", ".join(f"{cols[k]}: {a}" for k, a in enumerate(f["annotations"]) if a)
        print(f"{f['bus']:>8} {f['phase']} {cells}  {notes}", file=out)
    print(f"\n{'DG kW':>10}{head}", file=out)
    for d in cmp["dispatch"]:
        print(f"{d['generator']:>10}" + "".join(f"{'-':>{width}}" if x is None else f"{_clean(x, 2):>{width}.2f}"
                                                for x in d["p_kw"]), file=out)
    print(f"{'cost':>10}" + "".join(f"{c:>{width}.2f}" for c in cmp["costs"]), file=out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fcopf-engine", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("network", nargs="?", help="network JSON file")
    common.add_argument("--fixture", choices=["cigre-lv", "random"], help="use a bundled network")
    common.add_argument("--seed", type=int, help="seed for --fixture random")
    common.add_argument("--out", default="result.json", help="result file (default: result.json)")
    common.add_argument("--csv", metavar="DIR", help="also write CSV tables to DIR")
    common.add_argument("--tol", type=float, help="solver tolerance")
    common.add_argument("--max-iter", type=int, help="iteration limit")

    for name, text in (("pf", "power flow"), ("sc", "short-circuit study")):
        p = sub.add_parser(name, parents=[common], help=f"{text}; every DG at capacity unless --no-dg")
        p.add_argument("--no-dg", action="store_true", help="dispatch no DG")
    sub.add_parser("opf", parents=[common], help="minimum-cost OPF")
    p = sub.add_parser("fcopf", parents=[common], help="fault-current constrained OPF")
    p.add_argument("--w-cost", type=float, default=DEFAULT_WEIGHTS[0], help="cost weight (default 1)")
    p.add_argument("--w-fault", type=float, default=DEFAULT_WEIGHTS[1], help="fault-current weight (default 1)")
    p.add_argument("--hard-cap", type=float, metavar="AMPS", help="cap on every faulted-phase current")

    p = sub.add_parser("compare", help="compare result files side by side")
    p.add_argument("results", nargs="+", help="result.json files")
    p.add_argument("--out", help="write the comparison as JSON")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            return _compare(args)
        net = _network(args)
        if args.command == "fcopf" and (args.w_cost < 0 or args.w_fault < 0):
            raise InputError("weights must be non-negative")
        if args.command == "fcopf" and args.hard_cap is not None and args.hard_cap <= 0:
            raise InputError("--hard-cap must be positive")
        if args.command in ("sc", "fcopf") and not net.fault_scenarios:
            raise InputError("network declares no fault scenarios")
        try:
            res, ok = run_study(args.command, net, args)
        except (PowerFlowError, ShortCircuitError) as exc:
            print(f"fcopf-engine: solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        except OpfBuildError as exc:
            raise InputError(str(exc)) from None
    except InputError as exc:
        print(f"fcopf-engine: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print_study(res)
    res.write_json(args.out)
    if args.csv:
        res.write_csv(args.csv)
    if not ok:
        print(f"fcopf-engine: solver failure: status {res.status}: {res.diagnostics.get('message', '')}",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _compare(args) -> int:
    results, labels = [], []
    for path in args.results:
        try:
            res = StudyResult.read_json(path)
        except OSError as exc:
            raise InputError(f"cannot read result file {path!r}: {exc.strerror}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path}: not a result file ({exc})") from None
        results.append(res)
        labels.append(res.meta.get("label") or Path(path).stem)
    cmp = compare_results(results, labels)
    print_comparison(cmp)
    if args.out:
        Path(args.out).write_text(json.dumps(cmp, indent=2) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

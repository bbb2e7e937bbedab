"""Command-line front end: ``entlink run|explore|trace-diff|tamper``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import explore, sim
from .config import parse_config
from .errors import EntlinkError


def _print(quiet: bool, *args):
    if not quiet:
        print(*args)


def cmd_run(args) -> int:
    path = Path(args.scenario)
    cfg = parse_config(path.read_text(encoding="utf-8"))
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    result = sim.run_scenario(cfg)
    summary = result.verdict.summary

    out_dir = Path(args.out or os.environ.get("ENTLINK_OUT") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / f"{path.stem}.events.jsonl"
    log_path.write_text(result.log_text(), encoding="utf-8")
    (out_dir / f"{path.stem}.summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")

    for key in ("frames", "packets_delivered", "data_packets_delivered", "messages_injected",
                "messages_delivered", "divergences", "retries", "backpressure", "stalls", "restarts", "dead"):
        _print(args.quiet, f"{key}: {summary[key]}")
    for cid, clocks in summary["clocks"].items():
        _print(args.quiet, f"clocks {cid}: exterior={clocks['exterior']} interior={clocks['interior']} "
                           f"subtime={clocks['subtime']}")
    ts = summary["timescales"]
    if ts is None:
        _print(args.quiet, "timescales: insufficient data")
    else:
        _print(args.quiet, f"timescales: dt_M/dt_P={ts['message_over_packet']:.3f} "
                           f"dt_P/dt_tick={ts['packet_over_tick']:.3f}" + (" FLAGGED" if ts["flagged"] else ""))
    for v in result.verdict.violations:
        print(f"violation at t={v.time}: {v.kind}: {v.detail}")
    _print(args.quiet, f"event log: {log_path}")
    print("PASS" if result.verdict.ok else f"FAIL ({len(result.verdict.violations)} violations)")
    return 0 if result.verdict.ok else 1


def cmd_explore(args) -> int:
    report = explore.explore_exhaustive(args.packets, args.capacity, r2l_packets=args.r2l,
                                        max_nacks=args.nacks, max_restarts=args.restarts,
                                        max_states=args.max_states)
    _print(args.quiet, f"reachable states: {report.states}")
    _print(args.quiet, f"protocol states: {report.protocol_states}")
    _print(args.quiet, f"transitions: {report.transitions}")
    _print(args.quiet, f"complete states: {report.complete_states}")
    _print(args.quiet, f"elapsed: {report.elapsed:.2f}s")
    for v in report.violations[:20]:
        print(f"violation: {v}")
    print("PASS" if report.ok else f"FAIL ({len(report.violations)} violations)")
    return 0 if report.ok else 1


def cmd_trace_diff(args) -> int:
    a = Path(args.a).read_bytes()
    b = Path(args.b).read_bytes()
    if a == b:
        _print(args.quiet, "identical")
        return 0
    la, lb = a.splitlines(), b.splitlines()
    for i, (x, y) in enumerate(zip(la, lb), 1):
        if x != y:
            print(f"first difference at line {i}:\n< {x.decode(errors='replace')}\n> {y.decode(errors='replace')}")
            break
    else:
        print(f"logs differ in length: {len(la)} vs {len(lb)} lines")
    return 1


def cmd_tamper(args) -> int:
    cases = sim.tamper_matrix()
    for c in cases:
        _print(args.quiet, f"{c.direction} phase {c.phase} {c.signal:7} bit {c.bit} -> {c.flipped_header}: "
                           f"{c.outcome} ({c.reason})")
    counts = {k: sum(1 for c in cases if c.outcome == k) for k in ("detected", "preserved", "undetected")}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0 if counts["undetected"] == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="print only the verdict")

    p = argparse.ArgumentParser(prog="entlink", description="Entangled-link scenario runner")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", help="output directory (default: $ENTLINK_OUT or .)")
    run.set_defaults(func=cmd_run)

    ex = sub.add_parser("explore", parents=[common], help="exhaustive state exploration")
    ex.add_argument("--packets", type=int, default=1)
    ex.add_argument("--capacity", type=int, default=1)
    ex.add_argument("--r2l", type=int, default=0, help="packets sent right to left")
    ex.add_argument("--nacks", type=int, default=1, help="forced NACK branches per path")
    ex.add_argument("--restarts", type=int, default=1, help="restart branches per path")
    ex.add_argument("--max-states", type=int, default=explore.DEFAULT_MAX_STATES)
    ex.set_defaults(func=cmd_explore)

    td = sub.add_parser("trace-diff", parents=[common], help="compare two event logs byte for byte")
    td.add_argument("a")
    td.add_argument("b")
    td.set_defaults(func=cmd_trace_diff)

    tm = sub.add_parser("tamper", parents=[common], help="enumerate single-bit header flips")
    tm.set_defaults(func=cmd_tamper)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EntlinkError, OSError) as exc:
        print(f"entlink: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

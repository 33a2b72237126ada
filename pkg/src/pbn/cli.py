"""``pbn`` command line: validate, run and inspect scenarios."""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import scenario as scn_mod
from .errors import PbnError
from .trace import TraceFormatError, parse_trace

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_NON_QUIESCENT = 2
EXIT_INVALID = 3
EXIT_BAD_QUERY = 2


class BadQuery(PbnError):
    pass


def bundled_scenarios() -> list[str]:
    root = resources.files("pbn") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(name: str) -> Path:
    """A path on disk, or the name of a bundled scenario."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("pbn") / "scenarios" / name
    if not name.endswith(".json"):
        bundled = resources.files("pbn") / "scenarios" / f"{name}.json"
    if bundled.is_file():
        return Path(str(bundled))
    return path


def cmd_validate(args) -> int:
    report = scn_mod.validate_file(resolve_scenario(args.file))
    if report.ok:
        print(f"{report.source}: ok")
        return EXIT_OK
    for v in report.violations:
        print(f"{report.source}: {v}")
    return EXIT_FAILED


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    path = resolve_scenario(args.file)
    report = scn_mod.validate_file(path)
    if not report.ok:
        for v in report.violations:
            print(f"{report.source}: {v}", file=sys.stderr)
        return EXIT_INVALID
    scenario = scn_mod.load(path)
    overrides = {
        "seed": args.seed,
        "ttl": args.ttl,
        "latency_ticks": args.latency,
        "split_horizon": None if args.split_horizon is None else args.split_horizon == "on",
        "faithful_routing": True if args.faithful_routing else None,
    }
    try:
        result = scn_mod.run(scenario, max_ticks=args.max_ticks, **overrides)
    except Exception as exc:
        world = getattr(exc, "world", None)
        if world is not None:
            marker = f"# partial trace: run aborted by {type(exc).__name__}"
            _write(args.trace, "\n".join(world.trace + [marker]) + "\n")
        raise
    trace = "\n".join(result.world.trace) + "\n"
    _write(args.trace, trace)
    summary = result.summary()
    _write(args.summary, json.dumps(summary, indent=2, sort_keys=True) + "\n")

    status = summary["status"]
    print(f"scenario {scenario.name}: {status} after {result.report.ticks} ticks, "
          f"{result.report.routing_updates} routing updates")
    for v in result.verdicts:
        print(f"  [{'PASS' if v.passed else 'FAIL'}] #{v.index} {v.type}: {v.detail}")
    if not result.quiescent:
        print("NonQuiescent: event queue not empty at max ticks")
    return result.exit_code


def _parse_tick(raw: str | None, flag: str) -> int | None:
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise BadQuery(f"{flag} expects a tick number, got {raw!r}") from None
    if value < 0:
        raise BadQuery(f"{flag} must be non-negative, got {value}")
    return value


def query(lines, node: str | None = None, kind: str | None = None, start=None, end=None):
    """Filter trace records; output order is trace order."""
    lo = _parse_tick(start, "--from")
    hi = _parse_tick(end, "--to")
    if lo is not None and hi is not None and lo > hi:
        raise BadQuery(f"empty time range {lo}..{hi}")
    for rec in parse_trace(lines):
        if node is not None and rec.node != node and rec.node.rpartition("#")[0] != node:
            continue
        if kind is not None and rec.kind != kind:
            continue
        if lo is not None and rec.t < lo:
            continue
        if hi is not None and rec.t > hi:
            continue
        yield rec


def cmd_inspect(args) -> int:
    try:
        lines = Path(args.trace).read_text(encoding="utf-8").splitlines()
        for rec in query(lines, args.node, args.kind, args.start, args.end):
            print(rec)
    except (BadQuery, TraceFormatError) as exc:
        print(f"BadQuery: {exc}", file=sys.stderr)
        return EXIT_BAD_QUERY
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbn", description="Proximity-network scenario runner")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file against the schema")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate a scenario and check its assertions")
    r.add_argument("file")
    r.add_argument("--seed", type=int)
    r.add_argument("--ttl", type=int)
    r.add_argument("--latency", type=int)
    r.add_argument("--split-horizon", choices=["on", "off"])
    r.add_argument("--faithful-routing", action="store_true")
    r.add_argument("--trace", metavar="PATH")
    r.add_argument("--summary", metavar="PATH")
    r.add_argument("--max-ticks", type=int)
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("inspect", help="filter a trace file")
    i.add_argument("trace")
    i.add_argument("--node")
    i.add_argument("--kind")
    i.add_argument("--from", dest="start")
    i.add_argument("--to", dest="end")
    i.set_defaults(func=cmd_inspect)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

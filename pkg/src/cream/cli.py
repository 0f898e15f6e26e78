"""Command line entry point: ``cream run``, ``cream measure``, ``cream snapshot``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from typing import List, Optional

from .harness import measure
from .harness.scenarios import CATALOG, UnknownScenario, run_all, select
from .harness.world import World
from .store import CookieStore

JSON_SCHEMA = 1


def _emit(payload: dict) -> None:
    print(json.dumps({"schema": JSON_SCHEMA, **payload}, indent=2, sort_keys=True))


def cmd_run(args: argparse.Namespace) -> int:
    if args.target == "all":
        ids = select(args.filter)
    elif args.target in CATALOG:
        ids = [args.target]
    else:
        print(f"unknown scenario {args.target!r}; try 'cream list'", file=sys.stderr)
        return 2
    try:
        summary = run_all(ids, seed=args.seed, jobs=args.jobs)
    except UnknownScenario as exc:
        print(f"unknown scenario {exc}", file=sys.stderr)
        return 2
    if args.json:
        _emit({"command": "run", "seed": args.seed, **summary.to_dict()})
    else:
        if args.verbose:
            for result in summary.results:
                print(f"== {result.id}")
                print("\n".join("   " + line for line in result.transcript))
        print(summary.table())
    return summary.exit_code


def cmd_list(args: argparse.Namespace) -> int:
    for sid, scenario in CATALOG.items():
        print(f"{sid:<28} {scenario.expected.value:<9} {scenario.claim}")
    return 0


def cmd_measure(args: argparse.Namespace) -> int:
    if args.kind == "sizes":
        rows = measure.sizes(args.seed)
        if args.json:
            _emit({"command": "measure", "kind": "sizes", "rows": [asdict(r) for r in rows]})
        else:
            print(measure.format_sizes(rows))
        return 0

    rows = measure.latency(args.iters, args.seed)
    update = measure.update_scaling_ratio(args.iters, args.seed)
    report = measure.report_scaling_ratio(args.iters, args.seed)
    ratios = {
        "update_10_over_1": round(update[0], 3),
        "report_5_over_1": round(report[0], 3),
    }
    if args.json:
        _emit({
            "command": "measure",
            "kind": "latency",
            "iters": args.iters,
            "rows": [asdict(r) for r in rows],
            "ratios": ratios,
        })
    else:
        print(measure.format_latency(rows))
        print(f"\n10 updates / 1 update     {ratios['update_10_over_1']:.2f}x")
        print(f"5-cookie / 1-cookie report {ratios['report_5_over_1']:.2f}x")
    return 0


def cmd_snapshot(args: argparse.Namespace) -> int:
    if args.create:
        world = World(args.seed)
        browser = world.browser()
        world.login(browser)
        world.visit(browser)
        with open(args.file, "w", encoding="utf-8") as fh:
            json.dump(browser.store.to_snapshot(), fh, indent=2)
        print(f"wrote {len(browser.store)} cookies to {args.file}")
        return 0
    try:
        with open(args.file, encoding="utf-8") as fh:
            store = CookieStore.from_snapshot(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load snapshot {args.file}: {exc}", file=sys.stderr)
        return 1
    if args.json:
        _emit({"command": "snapshot", **store.to_snapshot()})
        return 0
    now = store.clock()
    cookies = store.entries()
    for c in cookies:
        flags = [f for f, on in (("Secure", c.secure), ("HttpOnly", c.http_only),
                                 ("BrowserOnly", c.browser_only), ("Monitored", c.monitored),
                                 ("invalid", c.invalid), ("expired", c.is_expired(now))) if on]
        log = f" log={len(c.changelog)}" if c.monitored else ""
        print(f"{c.domain}{c.path} {c.name} [{' '.join(flags)}]{log}")
    print(f"{len(cookies)} cookies, {sum(c.monitored for c in cookies)} Monitored")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cream", description=__doc__)
    parser.add_argument("--log-level", default="ERROR", help="logging level (default ERROR)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario or the whole catalog")
    run.add_argument("target", help="scenario id or 'all'")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--json", action="store_true", help="machine-readable output")
    run.add_argument("--filter", help="glob over scenario ids, with 'all'")
    run.add_argument("--jobs", type=int, default=1, help="run scenarios in parallel")
    run.add_argument("-v", "--verbose", action="store_true", help="print transcripts")
    run.set_defaults(func=cmd_run)

    lst = sub.add_parser("list", help="list the scenario catalog")
    lst.set_defaults(func=cmd_list)

    meas = sub.add_parser("measure", help="encoding sizes or operation latency")
    meas.add_argument("kind", choices=["sizes", "latency"])
    meas.add_argument("--iters", type=int, default=10_000)
    meas.add_argument("--seed", type=int, default=0)
    meas.add_argument("--json", action="store_true")
    meas.set_defaults(func=cmd_measure)

    snap = sub.add_parser("snapshot", help="inspect (or --create) a cookie store snapshot")
    snap.add_argument("file")
    snap.add_argument("--create", action="store_true", help="write a snapshot after a demo login")
    snap.add_argument("--seed", type=int, default=0)
    snap.add_argument("--json", action="store_true")
    snap.set_defaults(func=cmd_snapshot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

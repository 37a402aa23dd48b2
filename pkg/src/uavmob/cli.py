"""Command-line front end: run, sweep, analyze, plan-pci, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .scenario import (
    ScenarioError,
    parse_scenario,
    parse_topology,
    replan_pcis,
    resolve_scenario_arg,
    with_mitigations,
)
from .sim import run, run_sweep, write_nrt_stats
from .topology import detect_pci_collision

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
DEFAULT_ALTITUDES = "30,60,90,120"


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ScenarioError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _load_raw(args) -> dict:
    raw = resolve_scenario_arg(args.scenario)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "mitigations", None):
        raw = with_mitigations(raw, [m for m in args.mitigations.split(",") if m])
    return raw


def cmd_run(args) -> int:
    result = run(parse_scenario(_load_raw(args)))
    result.write(args.out)
    print(json.dumps(result.metrics.by_kind, indent=2, sort_keys=True))
    return EXIT_OK


def _sweep(args, out: Path):
    raw = _load_raw(args)
    items = run_sweep(raw, "altitude", _floats(args.altitudes), workers=args.workers)
    hist, rates, rows, series, failed = {}, {}, [], [], []
    for it in items:
        if it.error:
            logging.error("altitude %s failed: %s", it.value, it.error)
            failed.append(it.value)
            continue
        sub = out / f"alt_{it.value:g}"
        it.result.write(sub)
        hist.update(it.result.metrics.nth_closest)
        rates.update(it.result.metrics.changes_per_min)
        rows.extend(it.result.event_log)
        series.extend(dict(s, altitude=it.value) for s in it.result.metrics.nrt_series)
    analysis.write_nth_closest_csv(hist, out / "nth_closest.csv")
    analysis.write_changes_csv(rates, out / "changes_per_min.csv")
    return rows, series, failed, raw


def cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, failed, _ = _sweep(args, out)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, series, failed, raw = _sweep(args, out)
    t_pp = parse_scenario(raw).ho.t_pingpong_s
    analysis.write_json(analysis.ho_summary(rows, t_pp), out / "ho_summary.json")
    write_nrt_stats(series, out / "nrt_stats.csv")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trace:
        if not args.cells:
            raise ScenarioError("--trace needs --cells")
        trace = analysis.ingest_trace(args.trace, args.cells)
        use_2d = args.bins == "2d"
        hist = analysis.nth_closest_strongest(trace, args.bin_width, use_2d)
        analysis.write_nth_closest_csv(hist, out / "nth_closest.csv")
        analysis.write_changes_csv(analysis.strongest_changes_per_minute(trace, args.bin_width),
                                   out / "changes_per_min.csv")
    if args.events:
        rows = analysis.read_event_log(args.events)
        analysis.write_json(analysis.ho_summary(rows, args.t_pingpong), out / "ho_summary.json")
    if not args.trace and not args.events:
        raise ScenarioError("analyze needs --trace/--cells and/or --events")
    return EXIT_OK


def cmd_plan_pci(args) -> int:
    raw = resolve_scenario_arg(args.scenario)
    planned = replan_pcis(raw)
    cfg = parse_scenario(raw)
    before = parse_topology(raw["topology"])
    after = parse_topology(planned["topology"])
    for alt in _floats(args.altitudes):
        n0 = len(detect_pci_collision(before, alt, cfg.propagation))
        n1 = len(detect_pci_collision(after, alt, cfg.propagation))
        print(f"altitude {alt:g} m: {n0} colliding pairs before, {n1} after")
    text = json.dumps(planned, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavmob", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, out_required=True):
        sp.add_argument("--scenario", required=True, help="scenario JSON path or packaged scenario name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mitigations", default="", help="comma list of separate_aerial, always_resolve_ecgi, adaptive_a3")
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("run", help="run one scenario")
    scenario_args(sp)
    sp.set_defaults(func=cmd_run)

    for name, func in (("sweep", cmd_sweep), ("report", cmd_report)):
        sp = sub.add_parser(name, help="altitude sweep" if name == "sweep" else "sweep plus summary tables")
        scenario_args(sp)
        sp.add_argument("--altitudes", default=DEFAULT_ALTITUDES)
        sp.add_argument("--workers", type=int, default=1)
        sp.set_defaults(func=func)

    sp = sub.add_parser("analyze", help="metrics from an external trace and/or an event log")
    sp.add_argument("--trace")
    sp.add_argument("--cells")
    sp.add_argument("--events")
    sp.add_argument("--out", required=True)
    sp.add_argument("--bin-width", type=float, default=15.0)
    sp.add_argument("--t-pingpong", type=float, default=2.0)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--bins-2d", dest="bins", action="store_const", const="2d")
    g.add_argument("--bins-3d", dest="bins", action="store_const", const="3d")
    sp.set_defaults(func=cmd_analyze, bins="3d")

    sp = sub.add_parser("plan-pci", help="re-plan PCIs and write the updated scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--altitudes", default=DEFAULT_ALTITUDES)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plan_pci)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, analysis.TraceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

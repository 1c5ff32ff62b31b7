"""Command-line entry point: ``agasp {fee-table,latency-sweep,latency-cdf,run-scenario}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .config import load_config
from .scenario import AuditMismatch, TraceAborted, run_configured_scenario


def _write(out_dir: Path, name: str, text: str) -> Path:
    path = out_dir / name
    path.write_text(text)
    return path


def cmd_fee_table(cfg, out: Path, args) -> int:
    table = ex.fee_table(cfg.fees, cfg.sim.schedule())
    _write(out, "fee_table.csv", table.csv())
    _write(out, "fee_summary.json", ex.dump_json({"seed": cfg.seed, **table.summary()}))
    for r in table.rows:
        print(f"{r.transaction:<40} {r.paying_party:<22} {r.fee_usd:>6.2f}")
    print(f"total savings {table.total_savings * 100:.1f}%, station-only savings {table.station_savings * 100:.1f}%")
    return 0


def cmd_latency_sweep(cfg, out: Path, args) -> int:
    try:
        samples = ex.latency_sweep(cfg.sim, progress=lambda i: print(f"trial {i} done", file=sys.stderr))
    except ex.ProbeNeverIncluded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write(out, "latency_sweep.csv", ex.sweep_csv(samples))
    stats = ex.sweep_stats(samples)
    _write(out, "latency_sweep_summary.json", ex.dump_json({"seed": cfg.seed, **stats.to_dict()}))
    for p, m in zip(stats.gas_prices, stats.means):
        print(f"{p:>15} wei  mean {m:9.1f} s")
    print(f"spearman {stats.spearman:.3f}")
    return 0


def cmd_latency_cdf(cfg, out: Path, args) -> int:
    try:
        result = ex.latency_cdf(cfg.sim, constant_load=args.constant_load)
    except ex.ProbeNeverIncluded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    stem = "latency_cdf_constant" if args.constant_load else "latency_cdf"
    _write(out, f"{stem}.csv", ex.cdf_csv(result))
    _write(out, f"{stem}_summary.json", ex.dump_json({"seed": cfg.seed, "constant_load": args.constant_load,
                                                       **result.summary()}))
    s = result.summary()
    print(f"mean {s['mean_seconds']:.1f} s, p95 {s['p95_seconds']:.1f} s, p95/mean {s['p95_over_mean']:.2f}")
    return 0


def cmd_run_scenario(cfg, out: Path, args) -> int:
    with open(out / "events.jsonl", "w") as log:
        run = run_configured_scenario(cfg, log)
    if run.trace is not None:
        _write(out, "trace.json", run.trace.to_json() + "\n")
    report = {"seed": cfg.seed, "clean": run.ok}
    if run.report is not None:
        report.update(run.report.to_dict())
    if isinstance(run.error, TraceAborted):
        report.update({"aborted_step": run.error.step, "reason": run.error.reason})
        print(f"TraceAborted at {run.error.step}: {run.error.reason}", file=sys.stderr)
    elif isinstance(run.error, AuditMismatch):
        report["diff"] = run.error.diff
        print("AuditMismatch:\n  " + "\n  ".join(run.error.diff), file=sys.stderr)
    _write(out, "audit.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    if run.ok:
        print(f"purchase settled, audit clean ({run.report.checks} checks)")
        return 0
    return 1


COMMANDS = {
    "fee-table": cmd_fee_table,
    "latency-sweep": cmd_latency_sweep,
    "latency-cdf": cmd_latency_cdf,
    "run-scenario": cmd_run_scenario,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agasp", description="Gasoline-purchase contract simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config (default: bundled)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out-dir", type=Path, default=Path("."), help="where outputs are written")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. sim.sweep.trials=3")
        if name == "latency-cdf":
            p.add_argument("--constant-load", action="store_true", help="control run with flattened load")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except (OSError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](cfg, args.out_dir, args)


if __name__ == "__main__":
    sys.exit(main())

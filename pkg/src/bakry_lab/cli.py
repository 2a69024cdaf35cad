"""Command-line entry point: ``bakry-lab <subcommand>``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import killing
from .geometry import NAMED_FIELDS
from .grid import CATALOG
from .suite import (
    CHECK_TYPES, ConfigError, RunConfig, _Context, CheckSpec, convergence_study, load_config,
    run_suite,
)

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bakry-lab",
        description="Numerical checks of weighted-Laplacian identities and estimates.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("catalog", help="list charts, named fields, check types and criteria")

    def common(p, levels=False):
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--slack-scale", type=float, help="multiply every slack constant")
        if levels:
            p.add_argument("--levels", type=int, default=3, help="number of grid levels (>= 2)")

    p = sub.add_parser("check", help="run the configured checks")
    common(p)
    p.add_argument("--parallel", action="store_true", help="run checks in worker processes")

    common(sub.add_parser("converge", help="convergence study of the configured checks"),
           levels=True)
    common(sub.add_parser("heat", help="single heat run with snapshot export"))
    common(sub.add_parser("killing", help="vector-field flow run with energy export"))
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.slack_scale is not None:
        if args.slack_scale < 0:
            raise ConfigError("--slack-scale must be >= 0")
        cfg.slack_scale = args.slack_scale
    if args.out:
        cfg.output = args.out
    return cfg


def _catalog() -> int:
    print("charts:")
    for name in sorted(CATALOG):
        print(f"  {name}")
    print("named vector fields:")
    for name in NAMED_FIELDS:
        print(f"  {name}")
    print("check types:")
    for name, ct in CHECK_TYPES.items():
        print(f"  {name:<22} {ct.description}")
        print(f"  {'':<22} required={list(ct.required)} optional={list(ct.optional)}")
    print("killing criteria:")
    for name in killing.CRITERIA:
        print(f"  {name}")
    return 0


def _check(cfg: RunConfig, parallel: bool) -> int:
    res = run_suite(cfg, parallel=parallel)
    print(res.summary.read_text(encoding="utf-8"), end="")
    print(f"report: {res.report}")
    return res.status


def _converge(cfg: RunConfig, levels: int) -> int:
    rows = convergence_study(cfg, levels, out_dir=cfg.output)
    for r in rows:
        order = "" if r.order is None else (r.order if isinstance(r.order, str) else f"{r.order:.3f}")
        print(f"{r.check:<24} {r.level:>2}  h={r.h:.4e}  value={r.value:.4e}  order={order}")
    return 0


def _heat(cfg: RunConfig) -> int:
    ctx = _Context(cfg, CheckSpec("heat", "heat"))
    run = ctx.run
    out = Path(cfg.output)
    run.export_raster(out / "raster")
    run.export_text(out / "text")
    run.export_diagnostics(out / "diagnostics.txt")
    print(f"{run.nsteps} steps, dt={run.dt:.3e}, cfl={run.cfl:.3f}, "
          f"{len(run.centers)} snapshots written to {out}")
    return 0


def _killing(cfg: RunConfig) -> int:
    specs = [s for s in cfg.checks if s.type == "killing_flow"]
    if not specs:
        raise ConfigError("the killing subcommand needs a check of type killing_flow")
    spec = specs[0]
    ctx = _Context(cfg, spec)
    p = spec.params
    X0 = np.stack([ctx.field(c) for c in p["X0"]])
    trace = killing.run_killing_flow(ctx.chart, X0, float(p.get("T", 1.0)), dt=p.get("dt"),
                                     n_snapshots=int(p.get("n_snapshots", 10)),
                                     method=p.get("method", "auto"), strict=False)
    out = Path(cfg.output)
    trace.export_energy(out / "energy.txt")
    summary = {"nsteps": trace.nsteps, "dt": trace.dt, "monotone": trace.monotone,
               "worst_increase": trace.worst_increase, "method": trace.method,
               "final_lie_sup": trace.lie_sup[trace.nsteps]}
    (out / "flow.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return 0 if trace.monotone else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "catalog":
            return _catalog()
        cfg = _config(args)
        if args.command == "check":
            return _check(cfg, args.parallel)
        if args.command == "converge":
            return _converge(cfg, args.levels)
        if args.command == "heat":
            return _heat(cfg)
        return _killing(cfg)
    except (ConfigError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line benchmark driver.

Subcommands::

    magqn mesh  --config FILE --refine K --out FILE
    magqn solve --config FILE [--method M ...] [--levels K] [--out DIR]
    magqn cycle --config FILE [--steps N] [--waveform FILE] [--out DIR]

Exit codes: 0 on full success, 1 on configuration errors, 2 when any
level x method solver cell failed (the run still completes and writes the
partial outputs).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, fem
from .config import ALL_METHODS, ConfigError, load_config
from .materials import HysteresisMaterial
from .mesh import Region, generate_benchmark_mesh, refine_uniform, save_mesh


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magqn",
        description="2D nonlinear magnetostatic benchmark solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mesh = sub.add_parser("mesh", help="generate and save a benchmark mesh")
    p_mesh.add_argument("--config", required=True, help="config file")
    p_mesh.add_argument("--refine", type=int, default=0,
                        help="uniform refinement steps (default 0)")
    p_mesh.add_argument("--out", required=True, help="output mesh file")

    p_solve = sub.add_parser("solve", help="single load step per level/method")
    p_solve.add_argument("--config", required=True, help="config file")
    p_solve.add_argument("--method", action="append", choices=ALL_METHODS,
                         help="restrict to this method (repeatable)")
    p_solve.add_argument("--levels", type=int,
                         help="use refinement levels 0..K-1")
    p_solve.add_argument("--out", help="output directory")

    p_cycle = sub.add_parser("cycle", help="warm-started load cycle")
    p_cycle.add_argument("--config", required=True, help="config file")
    p_cycle.add_argument("--method", action="append", choices=ALL_METHODS,
                         help="restrict to this method (repeatable)")
    p_cycle.add_argument("--steps", type=int, help="number of time steps")
    p_cycle.add_argument("--waveform", help="CSV file, one amplitude per line")
    p_cycle.add_argument("--levels", type=int,
                         help="use refinement levels 0..K-1")
    p_cycle.add_argument("--out", help="output directory")
    return parser


def _apply_overrides(config, args):
    if getattr(args, "levels", None) is not None:
        if args.levels < 1:
            raise ConfigError("--levels must be >= 1")
        config = replace(config, levels=tuple(range(args.levels)))
    if getattr(args, "method", None):
        config = replace(config, methods=tuple(args.method))
    if getattr(args, "steps", None) is not None:
        config = replace(config, cycle=replace(config.cycle, steps=args.steps))
    return config


def _out_dir(args) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_mesh(args) -> int:
    config = load_config(args.config)
    if args.refine < 0:
        raise ConfigError("--refine must be >= 0")
    mesh = generate_benchmark_mesh(config.geometry)
    for _ in range(args.refine):
        mesh = refine_uniform(mesh)
    save_mesh(mesh, args.out)
    print(f"wrote {mesh.n_vertices} vertices / {mesh.n_elements} elements "
          f"to {args.out}")
    return 0


def _cmd_solve(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    result = bench.run_single(config)
    print(result.table.to_text(), end="")
    out = _out_dir(args)
    if out is not None:
        (out / "table.txt").write_text(result.table.to_text())
        result.table.to_csv(out / "table.csv")
        model = config.model()
        for (li, method), rep in result.reports.items():
            rep.write_csv(out / f"iters_{method}_{li}.csv")
            mesh = result.meshes[li]
            state = None
            if isinstance(model, HysteresisMaterial):
                state = model.new_state(len(mesh.region_elements(Region.IRON)))
            fem.export_fields(mesh, model, result.sources[li],
                              result.solutions[(li, method)],
                              out / f"fields_{method}_{li}.csv", state)
    for li, method, msg in result.failures:
        print(f"FAILED level {li} method {method}: {msg}", file=sys.stderr)
    return 0 if result.ok else 2


def _cmd_cycle(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    waveform = None
    if args.waveform:
        try:
            waveform = bench.load_waveform_csv(args.waveform)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc))
    result = bench.run_cycle(config, waveform=waveform)
    print(result.table.to_text(), end="")
    out = _out_dir(args)
    if out is not None:
        (out / "table.txt").write_text(result.table.to_text())
        result.table.to_csv(out / "table.csv")
        for (li, method), trace in result.traces.items():
            trace.write_csv(out / f"trace_{method}_{li}.csv")
    for li, method, msg in result.failures:
        print(f"FAILED level {li} method {method}: {msg}", file=sys.stderr)
    return 0 if result.ok else 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "mesh":
            return _cmd_mesh(args)
        if args.command == "solve":
            return _cmd_solve(args)
        return _cmd_cycle(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``nomsim run | preset | derivcheck``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, build, build_cloud, build_supports_for, dump_config, load_config
from .engine import SimulationError
from .io import write_events_csv, write_series_csv, write_vtk_snapshot
from .operators import HESSIAN_INDEX, Operators, SingularShapeTensor
from .presets import PRESETS, preset_text

log = logging.getLogger("nomsim")

OUT_ENV = "NOMSIM_OUT"


def _common(parser):
    parser.add_argument("--threads", type=int, default=1, help="worker threads for force assembly")
    parser.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./nomsim_out)")
    parser.add_argument("--seed", type=int, default=None, help="override the configuration seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nomsim", description="Nonlocal operator particle solver")
    sub = p.add_subparsers(dest="command", required=True, metavar="{run,preset,derivcheck}")

    r = sub.add_parser("run", help="run a simulation from a configuration file")
    r.add_argument("config")
    r.add_argument("--steps", type=int, default=None, help="override the number of steps")
    _common(r)

    s = sub.add_parser("preset", help="print a reference configuration")
    s.add_argument("name", choices=PRESETS)
    s.add_argument("--desk", action="store_true", help="reduced size for a workstation")
    s.add_argument("-o", "--output", default=None, help="write to a file instead of stdout")
    _common(s)

    d = sub.add_parser("derivcheck", help="operator accuracy on w = |x|^2")
    d.add_argument("config")
    _common(d)
    return p


def _out_dir(args, stem) -> Path:
    base = args.out or os.environ.get(OUT_ENV) or "nomsim_out"
    path = Path(base) / stem if not args.out else Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def derivative_errors(ops: Operators) -> dict:
    """Max errors of nonlocal derivatives of w = sum x_a^2 over active particles."""
    x = ops.cloud.positions
    w = np.sum(x * x, axis=1)
    d = ops.derivatives(w)
    act = ops.active
    grad_err = np.abs(d[act, :ops.dim] - 2.0 * x[act]).max()
    out = {"w,x": grad_err}
    names = "xyz"
    for c, (a, b) in enumerate(HESSIAN_INDEX[ops.dim]):
        exact = 2.0 if a == b else 0.0
        out[f"w,{names[a]}{names[b]}"] = float(np.abs(d[act, ops.dim + c] - exact).max())
    return out


def cmd_derivcheck(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cloud = build_cloud(cfg)
    ops = Operators(cloud, build_supports_for(cfg, cloud))
    errs = derivative_errors(ops)
    print(f"particles {cloud.count}  dim {cloud.dim}  support {cfg.support.k or cfg.support.radius}")
    print(f"{'quantity':<10} {'max error':>12}  exact")
    for name, e in errs.items():
        exact = "2x" if name == "w,x" else ("2" if name[2] == name[3] else "0")
        print(f"{name:<10} {e:12.3e}  {exact}")
    return 0


def cmd_preset(args) -> int:
    text = preset_text(args.name, args.desk)
    if args.output:
        Path(args.output).write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.time.steps = args.steps
    out = _out_dir(args, Path(args.config).stem)
    (out / "config.resolved.yaml").write_text(dump_config(cfg), encoding="ascii")
    setup = build(cfg, threads=args.threads)
    sim = setup.simulation
    snaps = out / "snapshots"
    if cfg.output.vtk:
        snaps.mkdir(exist_ok=True)

    def snapshot(s):
        if cfg.output.vtk:
            write_vtk_snapshot(setup.cloud.positions, s.fields(),
                               snaps / f"step_{s.step_count:07d}.vtk",
                               title=f"{cfg.problem} step {s.step_count} t={s.time:.9g}")

    log.info("running %d steps, dt = %.6g s, %d particles", cfg.time.steps, sim.dt, setup.cloud.count)
    try:
        sim.run(cfg.time.steps, cfg.time.output_every, snapshot)
    finally:
        if cfg.output.series and len(sim.series):
            write_series_csv(sim.series, out / "series.csv")
        if cfg.output.events and sim.damage is not None:
            write_events_csv(sim.damage.events, out / "damage_events.csv")
    if cfg.output.vtk and (cfg.time.output_every == 0 or sim.step_count % cfg.time.output_every):
        snapshot(sim)
    print(f"finished {sim.step_count} steps, t = {sim.time:.6g} s; output in {out}")
    return 0


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    handlers = {"run": cmd_run, "preset": cmd_preset, "derivcheck": cmd_derivcheck}
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        msg = str(exc) if "file not found" in str(exc) else f"file not found: {exc.filename}"
        print(f"nomsim: error: {msg}", file=sys.stderr)
    except (ConfigError, SingularShapeTensor, SimulationError, ValueError, OSError) as exc:
        print(f"nomsim: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

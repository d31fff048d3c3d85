"""Command-line entry point.

Subcommands: solve, sweep-switch, sweep-restart, sweep-rhs, spmv-bench.
Every run-configuration key has a flag of the same name; a config file can
be given with --config and individual flags override it.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import bench
from .gen import parse_rhs_spec, parse_stencil_spec
from .io import (ConfigError, PrecondSpec, RunConfig, SolverKind,
                 load_run_config)
from .timing import CATEGORIES


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run-configuration file")
    p.add_argument("--matrix", help="Matrix Market file")
    p.add_argument("--gen", help="generator spec, e.g. laplace2d:50")
    p.add_argument("--solver", choices=[k.value for k in SolverKind])
    p.add_argument("--m", type=int, help="restart length")
    p.add_argument("--tol", type=float, dest="rtol", help="relative residual tolerance")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--precond", help="none | jacobi:K | poly:D")
    p.add_argument("--precond-fp32", action="store_true", default=None,
                   dest="precond_fp32",
                   help="build and apply the preconditioner in fp32")
    p.add_argument("--rcm", action="store_true", default=None,
                   help="reverse Cuthill-McKee reordering before the solve")
    p.add_argument("--rhs", help="ones | uniform | normal | file:PATH")
    p.add_argument("--switch-iter", type=int, dest="switch_iter")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for CSV outputs")
    p.add_argument("--allow-fp32-tol", action="store_true", default=None,
                   dest="allow_fp32_tol")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config)
    else:
        if not args.solver:
            raise ConfigError("solver required (use --solver or a config file)")
        cfg = RunConfig(solver=SolverKind(args.solver))
    updates = {}
    if args.solver:
        updates["solver"] = SolverKind(args.solver)
    if args.matrix:
        updates["matrix"] = args.matrix
        updates["gen"] = None
    if args.gen:
        updates["gen"] = parse_stencil_spec(args.gen)
        updates["matrix"] = None
    for key in ("m", "rtol", "max_iters", "switch_iter", "seed", "out",
                "precond_fp32", "rcm", "allow_fp32_tol"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    if args.precond is not None:
        updates["precond"] = PrecondSpec.parse(args.precond)
    cfg = replace(cfg, **updates)
    if args.rhs is not None:
        cfg.rhs = parse_rhs_spec(args.rhs, cfg.seed)
    elif "seed" in updates:
        cfg.rhs = replace(cfg.rhs, seed=cfg.seed)
    return cfg.validate()


def _parse_int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _print_report(report) -> None:
    status = "converged" if report.converged else "did NOT converge"
    print(f"{status} in {report.total_iters} iterations "
          f"(fp32 {report.iters_fp32} + fp64 {report.iters_fp64}), "
          f"{report.total_time:.3f}s")
    final = [e for e in report.residual_history if e.explicit is not None]
    if final:
        print(f"final explicit relative residual: {final[-1].explicit:.3e}")
    if report.loss_of_accuracy:
        print("WARNING: loss of accuracy detected (implicit residual was a false positive)")
    if report.stalled_at is not None:
        print(f"note: progress stalled near iteration {report.stalled_at}")
    parts = ", ".join(f"{k}={report.kernel_times.get(k, 0.0):.3f}s"
                      for k in CATEGORIES)
    print(f"kernel time: {parts}")


def _cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    report = bench.run_experiment(cfg, out_dir=args.out, repeats=args.trials or 3)
    _print_report(report)
    return 0 if report.converged else 1


def _cmd_sweep_switch(args) -> int:
    cfg = _config_from_args(args)
    points = _parse_int_list(args.points)
    rows = bench.sweep_switch_point(cfg, points, out_dir=args.out)
    for row in rows:
        print(row)
    return 0


def _cmd_sweep_restart(args) -> int:
    cfg = _config_from_args(args)
    sizes = _parse_int_list(args.sizes)
    rows = bench.sweep_restart(cfg, sizes, out_dir=args.out)
    for row in rows:
        print(row)
    return 0


def _cmd_sweep_rhs(args) -> int:
    cfg = _config_from_args(args)
    kinds = [parse_rhs_spec(t, cfg.seed) for t in args.kinds.split(",")]
    rows = bench.sweep_rhs(cfg, kinds, out_dir=args.out)
    for row in rows:
        print(row)
    return 0


def _cmd_spmv_bench(args) -> int:
    if not args.solver and not args.config:
        args.solver = "double"  # irrelevant to the benchmark, required by the config
    cfg = _config_from_args(args)
    problem = bench._build_problem(cfg)
    result = bench.spmv_bench(problem.A, reps=args.reps, trials=args.trials or 3,
                              seed=cfg.seed, warmup=args.warmup, name=problem.name)
    print(f"{result.name}: n={result.n} nnz={result.nnz} "
          f"max_nnz_row={result.max_nnz_row}")
    print(f"fp64 {result.t_fp64:.4f}s  fp32 {result.t_fp32:.4f}s  "
          f"speedup {result.measured_speedup:.2f} "
          f"(model {result.predicted:.2f}), quadrant {result.quadrant.value}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mpgmres",
        description="Mixed-precision restarted GMRES experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one configured solve (median of three)")
    _add_config_flags(p)
    p.add_argument("--trials", type=int, help="repeat count for the median (default 3)")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep-switch", help="precision-switch point sweep")
    _add_config_flags(p)
    p.add_argument("--points", required=True,
                   help="comma-separated switch iterations (multiples of m)")
    p.set_defaults(func=_cmd_sweep_switch)

    p = sub.add_parser("sweep-restart", help="restart length sweep")
    _add_config_flags(p)
    p.add_argument("--sizes", required=True, help="comma-separated restart lengths")
    p.set_defaults(func=_cmd_sweep_restart)

    p = sub.add_parser("sweep-rhs", help="right-hand-side sweep")
    _add_config_flags(p)
    p.add_argument("--kinds", required=True,
                   help="comma-separated rhs kinds (ones,uniform,normal,file:PATH)")
    p.set_defaults(func=_cmd_sweep_rhs)

    p = sub.add_parser("spmv-bench", help="fp32 vs fp64 sparse matvec benchmark")
    _add_config_flags(p)
    p.add_argument("--reps", type=int, default=1000, help="calls per timed batch")
    p.add_argument("--trials", type=int, help="timed batches, minimum kept (default 3)")
    p.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP,
                   help="untimed warm-up calls")
    p.set_defaults(func=_cmd_spmv_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

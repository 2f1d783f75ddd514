"""Command-line interface: ``airopt {solve,sweep,residual,selftest}``.

Exit status: 0 on success, 1 when a solve stops without converging,
2 on I/O errors, 3 on invalid configuration or data.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from airopt import io as airio
from airopt.air import air_solve, optimality_residual, write_trace_csv
from airopt.config import ConfigError, RunConfig, apply_overrides, parse_config, render_config
from airopt.harness import recovery_sweep, write_plot_script
from airopt.model import (
    Box,
    Free,
    GroupStructure,
    L2Ball,
    LeastSquares,
    LinearEquality,
    NonNegative,
    ProblemSpec,
    ZeroLoss,
    objective_J0,
    sparsity,
)
from airopt.selftest import run_selftest

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3

log = logging.getLogger("airopt")


class _IOProblem(Exception):
    pass


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise _IOProblem(f"no such file: {p}")
    return p


def _writable(path):
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise _IOProblem(f"cannot write to directory {parent}")
    return p


def _load_run_config(args) -> RunConfig:
    text = _existing(args.config).read_text() if args.config else ""
    return parse_config(apply_overrides(text, args.set))


def build_problem(cfg: RunConfig, A, b) -> ProblemSpec:
    """Assemble the problem described by ``cfg.problem`` around the data ``(A, b)``."""
    st = cfg.problem
    n = A.shape[1]
    if A.shape[0] != b.size:
        raise ValueError(f"matrix has {A.shape[0]} rows but right-hand side has {b.size} entries")
    if st.groups_file:
        groups = airio.load_groups(_existing(st.groups_file))
    elif n % st.group_size:
        raise ConfigError(f"group_size: {st.group_size} does not divide n = {n}")
    else:
        groups = GroupStructure.uniform(n, st.group_size)
    loss_kind = st.resolved_loss
    if st.constraint == "equality":
        if loss_kind != "zero":
            raise ConfigError("loss: with constraint = equality the data define the constraint, "
                              "so the loss must be zero")
        return ProblemSpec(ZeroLoss(n), cfg.penalty, st.mode, groups, LinearEquality(A, b))
    con = {
        "free": lambda: Free(),
        "nonnegative": lambda: NonNegative(),
        "box": lambda: Box(np.full(n, st.box_lo), np.full(n, st.box_hi)),
        "ball": lambda: L2Ball(np.zeros(n), st.ball_radius),
    }[st.constraint]()
    if loss_kind == "zero":
        loss = ZeroLoss(n)
    else:
        loss = LeastSquares(A, b, lower_bound=0.0 if st.f_lower is None else st.f_lower)
    return ProblemSpec(loss, cfg.penalty, st.mode, groups, con)


def _echo_config(cfg, out):
    out.write("# effective configuration\n")
    for line in render_config(cfg).splitlines():
        out.write(f"#   {line}\n" if line else "#\n")


def _fmt_vec(x, limit=20):
    if x.size > limit:
        return f"[{x.size} entries]"
    return ", ".join(f"{v:.10g}" for v in x)


def cmd_solve(args, out):
    cfg = _load_run_config(args)
    A = airio.load_matrix(_existing(args.matrix))
    b = airio.load_vector(_existing(args.rhs))
    trace_path = _writable(args.out)
    x0 = airio.load_vector(_existing(args.x0)) if args.x0 else None
    problem = build_problem(cfg, A, b)
    report = air_solve(problem, x0, cfg.air)
    write_trace_csv(report.trace, trace_path)
    if args.x_out:
        airio.save_vector(_writable(args.x_out), report.x_final)
    _echo_config(cfg, out)
    out.write(f"status = {report.status.value}\n")
    out.write(f"outer_iterations = {report.outer_iterations}\n")
    out.write(f"J0 = {objective_J0(problem, report.x_final)!r}\n")
    out.write(f"sparsity = {sparsity(problem, report.x_final)}\n")
    out.write(f"optimality_residual = {report.optimality_residual_final!r}\n")
    out.write(f"x = {_fmt_vec(report.x_final)}\n")
    if report.message:
        out.write(f"message = {report.message}\n")
    return EXIT_OK if report.status.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args, out):
    cfg = _load_run_config(args)
    if cfg.sweep is None:
        raise ConfigError("seed: the sweep command requires an explicit seed in [sweep]")
    csv_path = _writable(args.out)
    progress = None
    if args.progress:
        def progress(done, total):
            sys.stderr.write(f"\r{done}/{total} trials")
            if done == total:
                sys.stderr.write("\n")
    result = recovery_sweep(cfg.sweep, progress=progress)
    result.write_csv(csv_path)
    script = write_plot_script(csv_path)
    _echo_config(cfg, out)
    out.write(result.to_csv())
    for alg in cfg.sweep.algorithms:
        out.write(f"# transition {alg.value}: {result.transition(alg)}\n")
    out.write(f"# wrote {csv_path} and {script}\n")
    return EXIT_OK


def cmd_residual(args, out):
    cfg = _load_run_config(args)
    A = airio.load_matrix(_existing(args.matrix))
    b = airio.load_vector(_existing(args.rhs))
    x = airio.load_vector(_existing(args.point))
    problem = build_problem(cfg, A, b)
    if x.size != problem.n:
        raise ValueError(f"point has {x.size} entries, problem has {problem.n} variables")
    value = optimality_residual(problem, x, args.eps)
    out.write(f"optimality_residual = {value!r}\n")
    return EXIT_OK


def cmd_selftest(args, out):
    failures = run_selftest(out=lambda line: out.write(line + "\n"))
    return EXIT_OK if failures == 0 else EXIT_NOT_CONVERGED


def build_parser():
    parser = argparse.ArgumentParser(
        prog="airopt", description="Adaptively iterative reweighted sparse optimization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="configuration file (key = value with sections)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key; may be repeated")

    p = sub.add_parser("solve", help="run the reweighted outer loop on data files")
    common(p)
    p.add_argument("--matrix", required=True, help="matrix A (text or MatrixMarket)")
    p.add_argument("--rhs", required=True, help="right-hand side b")
    p.add_argument("--out", required=True, help="trace CSV to write")
    p.add_argument("--x0", help="starting point (default: projection of 0)")
    p.add_argument("--x-out", help="write the final iterate here, one value per line")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run the sparse-recovery phase-transition experiment")
    common(p)
    p.add_argument("--out", required=True, help="result CSV; a plot script is written beside it")
    p.add_argument("--progress", action="store_true", help="report trial progress on stderr")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("residual", help="optimality residual of a given point")
    common(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--rhs", required=True)
    p.add_argument("--point", required=True, help="point x to test")
    p.add_argument("--eps", type=float, default=0.0,
                   help="relaxation at which stationarity is measured (default 0)")
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except (_IOProblem, OSError) as exc:
        sys.stderr.write(f"airopt: {exc}\n")
        return EXIT_IO
    except (ConfigError, ValueError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"airopt: invalid input: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

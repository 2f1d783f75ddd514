"""Sparse-recovery phase-transition experiment.

Each trial draws a Gaussian measurement matrix ``A`` (m x n), a planted
signal ``x0`` with ``s`` nonzero groups and ``b = A x0``, then asks an
algorithm to recover ``x0`` from ``(A, b)``.  A trial succeeds when the
max-norm error is at most ``success_tol``.

Randomness: every trial owns a Philox stream keyed by
``(seed, s, trial_index)``, so the same instance is shown to every
algorithm and results do not depend on how trials are scheduled.
"""

from __future__ import annotations

import concurrent.futures
import csv
import enum
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from airopt.air import (
    AirConfig,
    DescentViolation,
    IterationRecord,
    SolveReport,
    Status,
    air_solve,
)
from airopt.model import GroupStructure, LinearEquality, ProblemSpec, ZeroLoss
from airopt.penalties import Mode, Penalty
from airopt.solvers import solve_weighted_l1_equality

log = logging.getLogger(__name__)

RESULT_HEADER = ("algorithm", "s", "successes", "trials", "success_rate",
                 "mean_outer_iters", "mean_wall_time_ms")
WORKERS_ENV = "AIROPT_SWEEP_WORKERS"
PAPER_S_VALUES = (5, 10, 15, 20, 22, 25, 28, 30, 33, 37, 41, 45)


class Algorithm(str, enum.Enum):
    UNWEIGHTED_L1 = "UnweightedL1"
    AIR_L1 = "AirL1"
    AIR_L2 = "AirL2"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        for alg in cls:
            if alg.value.lower() == key:
                return alg
        raise ValueError(f"unknown algorithm {name!r}; expected one of "
                         f"{', '.join(a.value for a in cls)}")


@dataclass(frozen=True)
class SweepConfig:
    s_values: tuple = PAPER_S_VALUES
    trials: int = 25
    seed: int = 0
    n: int = 256
    m: int = 100
    success_tol: float = 1e-3
    algorithms: tuple = tuple(Algorithm)
    penalty: Penalty = field(default_factory=lambda: Penalty.lpn(0.1))
    air: AirConfig = field(default_factory=AirConfig)
    group_size: int = 1
    workers: int | None = None
    record_wall_time: bool = True

    def __post_init__(self):
        object.__setattr__(self, "s_values", tuple(int(s) for s in self.s_values))
        object.__setattr__(self, "algorithms", tuple(Algorithm.parse(a) for a in self.algorithms))
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.group_size < 1 or self.n % self.group_size:
            raise ValueError(f"group_size {self.group_size} must divide n = {self.n}")
        if not self.s_values:
            raise ValueError("s_values must be nonempty")
        n_groups = self.n // self.group_size
        for s in self.s_values:
            if s < 0 or s > self.m or s > n_groups:
                raise ValueError(f"s_values: sparsity {s} outside [0, min(m, n/group_size)]")
        if not self.success_tol > 0:
            raise ValueError("success_tol must be positive")
        if not self.algorithms:
            raise ValueError("algorithms: at least one is required")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SweepRow:
    algorithm: Algorithm
    s: int
    successes: int
    trials: int
    mean_outer_iters: float
    mean_wall_time_ms: float

    @property
    def success_rate(self):
        return self.successes / self.trials


@dataclass
class SweepResult:
    rows: list

    def rate(self, algorithm, s):
        algorithm = Algorithm.parse(algorithm)
        for row in self.rows:
            if row.algorithm is algorithm and row.s == s:
                return row.success_rate
        raise KeyError((algorithm, s))

    def transition(self, algorithm, level=0.5):
        """Largest tested ``s`` whose success rate is at least ``level`` (None if none)."""
        algorithm = Algorithm.parse(algorithm)
        good = [r.s for r in self.rows if r.algorithm is algorithm and r.success_rate >= level]
        return max(good) if good else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(RESULT_HEADER)
        for r in self.rows:
            wr.writerow((r.algorithm.value, r.s, r.successes, r.trials, f"{r.success_rate:.6f}",
                         f"{r.mean_outer_iters:.6f}", f"{r.mean_wall_time_ms:.3f}"))
        return buf.getvalue()

    def write_csv(self, path):
        path = Path(path)
        path.write_text(self.to_csv())
        return path


# --------------------------------------------------------------------------


def trial_rng(seed, s, trial_index):
    """Independent Philox stream for one ``(s, trial_index)`` cell of a sweep."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(s), int(trial_index)])
    return np.random.Generator(np.random.Philox(ss))


def generate_instance(n, m, s, group_size=1, rng=None):
    """Gaussian ``A``, planted ``x0`` with ``s`` nonzero groups, and ``b = A @ x0``."""
    if rng is None:
        rng = np.random.default_rng()
    if s * group_size > n or n % group_size:
        raise ValueError(f"cannot plant {s} groups of size {group_size} in dimension {n}")
    A = rng.standard_normal((m, n))
    x0 = np.zeros(n)
    chosen = np.sort(rng.choice(n // group_size, size=s, replace=False))
    idx = (chosen[:, None] * group_size + np.arange(group_size)).ravel()
    x0[idx] = rng.standard_normal(idx.size)
    b = A @ x0
    return A, x0, b


def success(x_hat, x0, tol=1e-3):
    x_hat = np.asarray(x_hat, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x_hat.shape != x0.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x0.shape}")
    return bool(np.max(np.abs(x_hat - x0), initial=0.0) <= tol)


def _groups(config):
    if config.group_size == 1:
        return GroupStructure.singletons(config.n)
    return GroupStructure.uniform(config.n, config.group_size)


def solve_instance(config: SweepConfig, algorithm, A, b) -> SolveReport:
    algorithm = Algorithm.parse(algorithm)
    groups = _groups(config)
    con = LinearEquality(A, b)
    if algorithm is Algorithm.UNWEIGHTED_L1:
        sol = solve_weighted_l1_equality(A, b, np.ones(groups.m), groups,
                                         config.air.solver_opts, constraint=con)
        status = Status.CONVERGED_RESIDUAL if sol.converged else Status.SUBPROBLEM_FAILURE
        start = IterationRecord(0, math.nan, math.nan, 0.0, 0.0, (math.nan, math.nan), 0, 0, math.nan)
        done = IterationRecord(1, sol.objective, sol.objective, 0.0, 0.0, (1.0, 1.0), 0,
                               sol.inner_iterations, sol.kkt_residual)
        return SolveReport(sol.x, status, [start, done], sol.kkt_residual)
    mode = Mode.ABS if algorithm is Algorithm.AIR_L1 else Mode.SQUARE
    problem = ProblemSpec(ZeroLoss(config.n), config.penalty, mode, groups, con)
    return air_solve(problem, None, config.air)


def run_trial(config: SweepConfig, algorithm, s, trial_index):
    """Run one seeded trial; returns ``(success, report, wall_time_ms)``.

    Solver exceptions are caught and scored as failures so that one bad
    trial cannot abort a sweep.
    """
    A, x0, b = generate_instance(config.n, config.m, s, config.group_size,
                                 trial_rng(config.seed, s, trial_index))
    t0 = time.perf_counter()
    try:
        report = solve_instance(config, algorithm, A, b)
    except (DescentViolation, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("trial %s s=%d #%d failed: %s", Algorithm.parse(algorithm).value, s,
                    trial_index, exc)
        report = SolveReport(np.zeros(config.n), Status.SUBPROBLEM_FAILURE, [], math.nan, str(exc))
        return False, report, (time.perf_counter() - t0) * 1e3
    elapsed = (time.perf_counter() - t0) * 1e3
    if report.status is Status.SUBPROBLEM_FAILURE:
        log.warning("trial %s s=%d #%d: %s", Algorithm.parse(algorithm).value, s, trial_index,
                    report.message or "subproblem failure")
    return success(report.x_final, x0, config.success_tol), report, elapsed


def _trial_task(args):
    config, algorithm, s, t = args
    ok, report, ms = run_trial(config, algorithm, s, t)
    return ok, report.outer_iterations, ms


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return max(value, 1)
    return os.cpu_count() or 1


def recovery_sweep(config: SweepConfig, *, progress=None) -> SweepResult:
    """Run every ``(algorithm, s, trial)`` cell and aggregate per ``(algorithm, s)``.

    ``progress``, if given, is called as ``progress(done, total)``.
    """
    algorithms = [a for a in Algorithm if a in config.algorithms]
    s_values = sorted(set(config.s_values))
    tasks = [(config, a, s, t) for a in algorithms for s in s_values for t in range(config.trials)]
    workers = config.workers if config.workers is not None else default_workers()
    results = [None] * len(tasks)
    if workers <= 1:
        for i, task in enumerate(tasks):
            results[i] = _trial_task(task)
            if progress:
                progress(i + 1, len(tasks))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_trial_task, task): i for i, task in enumerate(tasks)}
            for done, fut in enumerate(concurrent.futures.as_completed(futures), 1):
                results[futures[fut]] = fut.result()
                if progress:
                    progress(done, len(tasks))
    rows = []
    i = 0
    for a in algorithms:
        for s in s_values:
            cell = results[i:i + config.trials]
            i += config.trials
            wall = float(np.mean([c[2] for c in cell])) if config.record_wall_time else 0.0
            rows.append(SweepRow(a, s, sum(bool(c[0]) for c in cell), config.trials,
                                 float(np.mean([c[1] for c in cell])), wall))
    return SweepResult(rows)


PLOT_TEMPLATE = '''"""Plot empirical recovery probability against sparsity from {csv_name}."""

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
series = defaultdict(list)
with open(here / "{csv_name}", newline="") as fh:
    for row in csv.DictReader(fh):
        series[row["algorithm"]].append((int(row["s"]), float(row["success_rate"])))

fig, ax = plt.subplots(figsize=(5, 3.5))
for name, pts in series.items():
    pts.sort()
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
ax.set_xlabel("Sparsity s")
ax.set_ylabel("Empirical success recovery probability")
ax.set_ylim(-0.02, 1.02)
ax.grid(alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig(here / "{png_name}", dpi=150)
'''


def write_plot_script(csv_path):
    """Write ``plot_<stem>.py`` next to the result CSV and return its path."""
    csv_path = Path(csv_path)
    script = csv_path.with_name(f"plot_{csv_path.stem}.py")
    script.write_text(PLOT_TEMPLATE.format(csv_name=csv_path.name, png_name=f"{csv_path.stem}.png"))
    return script

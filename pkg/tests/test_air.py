import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airopt.air import (
    TRACE_HEADER,
    AirConfig,
    GuardStatus,
    Status,
    air_solve,
    available_reduction,
    delta_G,
    level_set_guard,
    optimality_residual,
    trace_to_csv,
    update_epsilon,
)
from airopt.model import (
    Box,
    Free,
    GroupStructure,
    InfeasiblePointError,
    LeastSquares,
    LinearEquality,
    NonNegative,
    ProblemSpec,
    ZeroLoss,
    objective_J,
    surrogate_value,
)
from airopt.penalties import Mode, Penalty, r_prime
from airopt.solvers import SolverOptions

from instances import CATALOG, CONSTRAINTS, descent_suite, random_problem
from oracles import grid_argmin, stationarity_grid


@pytest.fixture(autouse=True)
def _quiet_guard(caplog):
    caplog.set_level(logging.ERROR, logger="airopt.air")


def tiny(penalty=Penalty.lpn(0.1), mode=Mode.ABS):
    """``A = [1 2], b = 2``: the feasible line ``x1 = 2 - 2 x2``."""
    A = np.array([[1.0, 2.0]])
    return ProblemSpec(ZeroLoss(2), penalty, mode, GroupStructure.singletons(2),
                       LinearEquality(A, np.array([2.0])))


# ---------------------------------------------------------------- examples

@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("pen", CATALOG, ids=str)
def test_single_feasible_point_takes_one_iteration(pen, mode):
    problem = ProblemSpec(ZeroLoss(2), pen, mode, GroupStructure.singletons(2),
                          LinearEquality(np.eye(2), np.array([1.0, 0.0])))
    report = air_solve(problem, None, AirConfig())
    assert np.allclose(report.x_final, [1.0, 0.0], atol=1e-12)
    assert report.outer_iterations == 1
    assert report.status.converged


def test_tiny_instance_reaches_global_minimizer():
    # oracle: minimize |2 - 2 t|^0.1 + |t|^0.1 over the feasible line by grid refinement;
    # the cusps are narrower than any grid step, so the grid has both kinks t = 0, 1 as nodes
    t_star, v_star = grid_argmin(lambda t: abs(2 - 2 * t) ** 0.1 + abs(t) ** 0.1, -3.0, 3.0,
                                 num=24001)
    assert t_star == pytest.approx(1.0, abs=1e-9)
    assert v_star == pytest.approx(1.0, abs=1e-9)
    assert v_star < 2 ** 0.1
    report = air_solve(tiny(), None, AirConfig(eps0=1.0, eps_decay=0.7))
    assert report.status.converged
    assert np.max(np.abs(report.x_final - [2 - 2 * t_star, t_star])) <= 1e-4


def test_recovers_planted_sparse_vector():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((100, 256))
    x0 = np.zeros(256)
    x0[rng.choice(256, 10, replace=False)] = rng.standard_normal(10)
    problem = ProblemSpec(ZeroLoss(256), Penalty.lpn(0.1), Mode.ABS,
                          GroupStructure.singletons(256), LinearEquality(A, A @ x0))
    report = air_solve(problem, None, AirConfig())
    assert np.max(np.abs(report.x_final - x0)) <= 1e-3


def test_infeasible_start_is_projected():
    report = air_solve(tiny(), np.array([5.0, 5.0]), AirConfig())
    assert abs(report.x_final @ [1.0, 2.0] - 2.0) <= 1e-10


def test_zero_relaxation_needs_finite_slope():
    with pytest.raises(ValueError, match="finite slope"):
        air_solve(tiny(Penalty.lpn(0.5)), None, AirConfig(eps0=0.0, eps_floor=0.0))
    with pytest.raises(ValueError):
        air_solve(tiny(Penalty.log(1.0), Mode.SQUARE), None, AirConfig(eps0=0.0, eps_floor=0.0))
    report = air_solve(tiny(Penalty.log(1.0)), None, AirConfig(eps0=0.0, eps_floor=0.0))
    assert report.status.converged


def test_config_validation():
    with pytest.raises(ValueError):
        AirConfig(eps_decay=0.0)
    with pytest.raises(ValueError):
        AirConfig(eps_decay=1.5)
    with pytest.raises(ValueError):
        AirConfig(eps0=1e-7, eps_floor=1e-6)
    with pytest.raises(ValueError):
        AirConfig(outer_tol=0.0)


def test_repeated_inner_failure_is_reported():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 60))
    b = A @ (rng.standard_normal(60) * (rng.random(60) < 0.3))
    problem = ProblemSpec(ZeroLoss(60), Penalty.log(1.0), Mode.ABS,
                          GroupStructure.uniform(60, 2), LinearEquality(A, b))
    cfg = AirConfig(solver_opts=SolverOptions(max_inner_iter=1))
    report = air_solve(problem, None, cfg)
    assert report.status is Status.SUBPROBLEM_FAILURE
    assert report.outer_iterations == 2
    assert "did not converge" in report.message


# ----------------------------------------------------------- eps schedule

@pytest.mark.parametrize("eps, decay, floor, expected", [
    (1.0, 0.7, 1e-6, 0.7), (1e-6, 0.7, 1e-6, 1e-6), (1.0, 1.0, 1e-6, 1.0),
    (2e-6, 0.1, 1e-6, 1e-6), (0.5, 0.7, 0.0, 0.35),
])
def test_update_epsilon(eps, decay, floor, expected):
    cfg = AirConfig(eps0=max(eps, floor), eps_decay=decay, eps_floor=floor)
    assert update_epsilon(eps, cfg) == pytest.approx(expected, rel=1e-15)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=8), st.floats(0.01, 1.0),
       st.floats(0.0, 1e-3))
def test_update_epsilon_never_increases(eps, decay, floor):
    cfg = AirConfig(eps0=10.0, eps_decay=decay, eps_floor=floor)
    e = np.array(eps)
    out = update_epsilon(e, cfg)
    assert np.all(out <= e)
    assert np.all(out >= np.minimum(floor, e))


# ------------------------------------------------------ optimality residual

def test_residual_at_tiny_minimizer_is_small():
    for eps in (1e-6, 1e-8):
        assert optimality_residual(tiny(), np.array([0.0, 1.0]), eps) <= 1e-4


@pytest.mark.parametrize("eps, stationary", [(0.05, True), (0.1, True), (3.0, False)])
def test_residual_at_other_vertex_matches_grid(eps, stationary):
    # at x = (2, 0): slope r'(2 + eps) on x1, interval of radius r'(eps) on x2
    pen = Penalty.lpn(0.1)
    g = [r_prime(pen, 2.0 + eps), 0.0]
    ref = stationarity_grid(g, [0.0, r_prime(pen, eps)], [1.0, 2.0], lam_range=0.2, num=20001)
    res = optimality_residual(tiny(), np.array([2.0, 0.0]), eps)
    assert res == pytest.approx(ref, abs=5e-5)
    assert (res <= 1e-12) is stationary
    if not stationary:
        assert res > 1e-3


def test_residual_with_unbounded_slope_at_exact_zero():
    # eps = 0 with infinite slope at zero leaves the zero block unrestricted
    assert optimality_residual(tiny(), np.array([0.0, 1.0]), 0.0) == pytest.approx(0.0, abs=1e-12)


def test_residual_rejects_infeasible_point():
    with pytest.raises(InfeasiblePointError):
        optimality_residual(tiny(), np.array([0.0, 0.0]), 0.1)


def test_residual_vanishes_at_converged_fixed_relaxation():
    rng = np.random.default_rng(5)
    M, y = rng.standard_normal((12, 6)), 2 * rng.standard_normal(12)
    problem = ProblemSpec(LeastSquares(M, y), Penalty.log(2.0), Mode.ABS,
                          GroupStructure.singletons(6), NonNegative())
    cfg = AirConfig(eps0=0.3, eps_decay=1.0, eps_floor=0.0, outer_tol=1e-12, max_outer_iter=2000)
    report = air_solve(problem, None, cfg)
    assert report.optimality_residual_final <= 10 * cfg.solver_opts.dual_tol


# ---------------------------------------------------------- level-set guard

def _fra_two_groups():
    return ProblemSpec(ZeroLoss(2), Penalty.fra(1.0), Mode.ABS, GroupStructure.singletons(2), Free())


@pytest.mark.parametrize("eps0, status", [(0.25, GuardStatus.PASS), (1.0, GuardStatus.PASS),
                                          (1.01, GuardStatus.WARN), (3.0, GuardStatus.WARN)])
def test_guard_fra_example(eps0, status):
    # 2 eps0 / (eps0 + 1) <= 0 + 1  iff  eps0 <= 1
    res = level_set_guard(_fra_two_groups(), np.zeros(2), eps0)
    assert res.status is status
    assert (2 * eps0 / (eps0 + 1) <= 1) is (status is GuardStatus.PASS)


def test_guard_strict_mode_fails_and_solver_refuses():
    problem = _fra_two_groups()
    assert level_set_guard(problem, np.zeros(2), 2.0, strict=True).status is GuardStatus.FAIL
    report = air_solve(problem, np.zeros(2), AirConfig(eps0=2.0, strict_guard=True))
    assert report.status is Status.GUARD_REJECTED
    assert report.trace == []


@pytest.mark.parametrize("pen", [Penalty.lpn(0.5), Penalty.lpn(0.1), Penalty.log(2.0)], ids=str)
def test_guard_passes_for_unbounded_penalties(pen):
    problem = ProblemSpec(ZeroLoss(3), pen, Mode.ABS, GroupStructure.singletons(3), Free())
    assert level_set_guard(problem, np.full(3, 100.0), 50.0).status is GuardStatus.PASS


@pytest.mark.parametrize("pen", CATALOG, ids=str)
def test_guard_passes_on_bounded_set(pen):
    problem = ProblemSpec(ZeroLoss(3), pen, Mode.SQUARE, GroupStructure.singletons(3),
                          Box(-np.ones(3), np.ones(3)))
    assert level_set_guard(problem, np.ones(3), 10.0).status is GuardStatus.PASS


def test_guard_passes_for_coercive_loss():
    problem = ProblemSpec(LeastSquares(np.eye(3), np.ones(3)), Penalty.exp(1.0), Mode.ABS,
                          GroupStructure.singletons(3), Free())
    assert level_set_guard(problem, np.full(3, 9.0), 5.0).status is GuardStatus.PASS


# ---------------------------------------------------------- model reduction

def test_surrogate_arithmetic_on_tiny_instance():
    p = tiny()
    w = np.array([1.0, 1.0])
    args = (p.loss, p.mode, p.groups, p.constraint, w)
    assert surrogate_value(*args, [2.0, 0.0]) - surrogate_value(*args, [0.0, 1.0]) == 1.0


def test_delta_g_with_constant_weights():
    # scad with lambda = 3 has weight exactly 3 while c + eps <= 3
    p = tiny(Penalty.scad(3.0, 3.7))
    assert delta_G(p, [2.0, 0.0], [0.0, 1.0], 0.5) == pytest.approx(3.0, rel=1e-15)
    assert delta_G(p, [2.0, 0.0], [2.0, 0.0], 0.5) == 0.0


def test_available_reduction_vanishes_at_stationary_point():
    p = tiny()
    assert available_reduction(p, np.array([0.0, 1.0]), 1e-6) <= 1e-10
    assert available_reduction(p, np.array([1.0, 0.5]), 0.5) > 1e-3


# ------------------------------------------------------ trace and invariants

def test_trace_csv_header_and_rows():
    report = air_solve(tiny(), None, AirConfig())
    text = trace_to_csv(report.trace)
    lines = text.splitlines()
    assert lines[0] == "k,J,J0,delta_G,eps,w_min,w_max,sparsity,inner_iters,kkt_residual"
    assert tuple(lines[0].split(",")) == TRACE_HEADER
    assert len(lines) == len(report.trace) + 1
    assert report.trace[-1].sparsity == 1


def test_runs_are_bit_identical():
    problem = descent_suite(7, seed=9)[3]
    a = air_solve(problem, None, AirConfig())
    b = air_solve(problem, None, AirConfig())
    assert trace_to_csv(a.trace) == trace_to_csv(b.trace)
    assert np.array_equal(a.x_final, b.x_final)


def _check_run(problem, cfg):
    report = air_solve(problem, None, cfg)
    J = [r.J for r in report.trace]
    for prev, nxt in zip(J, J[1:]):
        assert nxt <= prev + 1e-8 * (1 + abs(prev))
    eps = [r.eps for r in report.trace]
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert min(eps) >= cfg.eps_floor
    dG = [r.delta_G for r in report.trace[1:]]
    assert min(dG, default=0.0) >= -1e-10
    # the descent lemma telescopes: total model reduction is bounded by the initial gap
    fbar = problem.loss.lower_bound
    x_start = problem.constraint.project(np.zeros(problem.n))
    assert report.trace[0].J == objective_J(problem, x_start, cfg.eps0)
    assert sum(dG) <= report.trace[0].J - fbar + 1e-6
    return report


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(CATALOG), st.sampled_from(list(Mode)),
       st.sampled_from(CONSTRAINTS))
def test_descent_and_schedule_invariants(seed, pen, mode, con):
    problem = random_problem(np.random.default_rng(seed), pen, mode, con)
    report = _check_run(problem, AirConfig(assert_descent=False))
    assert report.status.converged


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(CATALOG), st.sampled_from(list(Mode)))
def test_fixed_relaxation_reaches_stationarity(seed, pen, mode):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    M, y = rng.standard_normal((n + 4, n)), 2 * rng.standard_normal(n + 4)
    problem = ProblemSpec(LeastSquares(M, y), pen, mode, GroupStructure.singletons(n),
                          Box(-np.ones(n), np.ones(n)))
    cfg = AirConfig(eps0=0.5, eps_decay=1.0, eps_floor=0.0, outer_tol=1e-12, max_outer_iter=2000)
    report = air_solve(problem, None, cfg)
    assert report.optimality_residual_final <= 10 * cfg.solver_opts.dual_tol
    assert math.isfinite(report.trace[-1].J)

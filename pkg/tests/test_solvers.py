import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog, minimize

from airopt.model import (
    Box,
    Free,
    GroupStructure,
    L2Ball,
    LeastSquares,
    LinearEquality,
    NonNegative,
    Quadratic,
    SingularSystemError,
    ZeroLoss,
)
from airopt.penalties import Mode
from airopt.solvers import (
    InfeasibleEqualityError,
    SolverOptions,
    SubproblemSpec,
    block_soft_threshold,
    kkt_residual,
    project,
    prox_weighted_norm,
    solve_prox_subproblem,
    solve_subproblem,
    solve_weighted_l1_equality,
    solve_weighted_l2_equality,
)
from airopt.solvers.crossover import independent_columns, simplex_crossover

from oracles import grid_argmin, grid_argmin_2d, lp_vertex_optimum, stationarity_grid, \
    weighted_l2_kkt

SING2 = GroupStructure.singletons(2)


def l1_linprog(A, b, w):
    """Reference weighted l1 optimum from HiGHS on the split LP."""
    q, n = A.shape
    res = linprog(np.concatenate([w, w]), A_eq=np.hstack([A, -A]), b_eq=b,
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun, res.x[:n] - res.x[n:]


# ------------------------------------------------------- weighted l2, equality

@pytest.mark.parametrize("w, expected", [((1.0, 1.0), (1.0, 1.0)), ((1.0, 3.0), (1.5, 0.5))])
def test_l2_closed_form_examples(w, expected):
    sol = solve_weighted_l2_equality(np.array([[1.0, 1.0]]), np.array([2.0]), np.array(w), SING2)
    assert np.allclose(sol.x, expected, atol=1e-14)
    assert sol.converged and sol.kkt_residual <= 1e-10
    ref = weighted_l2_kkt(np.array([[1.0, 1.0]]), np.array([2.0]), np.array(w))
    assert np.allclose(sol.x, ref, atol=1e-14)


def test_l2_unique_feasible_point():
    sol = solve_weighted_l2_equality(np.eye(2), np.array([1.0, 0.0]), np.array([0.3, 7.0]), SING2)
    assert np.allclose(sol.x, [1.0, 0.0], atol=1e-15)


def test_l2_closed_form_matches_dense_kkt():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        q = int(rng.integers(1, min(n, 5) + 1))
        groups = GroupStructure.contiguous(_random_partition(rng, n))
        A = rng.standard_normal((q, n))
        b = rng.standard_normal(q)
        w = rng.uniform(1e-2, 10.0, groups.m)
        sol = solve_weighted_l2_equality(A, b, w, groups)
        ref = weighted_l2_kkt(A, b, groups.expand(w))
        assert np.max(np.abs(sol.x - ref)) <= 1e-8
        assert sol.kkt_residual <= 1e-8


def test_l2_with_quadratic_loss_matches_dense_kkt():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n, q = 6, 2
        M = rng.standard_normal((8, n))
        y = rng.standard_normal(8)
        A, b = rng.standard_normal((q, n)), rng.standard_normal(q)
        w = rng.uniform(0.1, 2.0, n)
        sol = solve_weighted_l2_equality(A, b, w, GroupStructure.singletons(n),
                                         loss=LeastSquares(M, y))
        ref = weighted_l2_kkt(A, b, w, H=M.T @ M, h=M.T @ y)
        assert np.max(np.abs(sol.x - ref)) <= 1e-8


def test_l2_rank_deficient_raises():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(SingularSystemError):
        solve_weighted_l2_equality(A, np.array([1.0, 2.0]), np.ones(2), SING2)


def _random_partition(rng, n):
    sizes = []
    while sum(sizes) < n:
        sizes.append(int(min(rng.integers(1, 4), n - sum(sizes))))
    return sizes


# ------------------------------------------------------- weighted l1, equality

def test_l1_examples():
    A, b = np.array([[1.0, 1.0]]), np.array([2.0])
    sol = solve_weighted_l1_equality(A, b, np.array([1.0, 2.0]), SING2)
    assert np.allclose(sol.x, [2.0, 0.0], atol=1e-8)
    assert sol.objective == pytest.approx(2.0, abs=1e-8)
    assert lp_vertex_optimum(A, b, np.array([1.0, 2.0]))[0] == pytest.approx(2.0)
    tie = solve_weighted_l1_equality(A, b, np.array([1.0, 1.0]), SING2)
    assert tie.objective == pytest.approx(2.0, abs=1e-8)
    assert np.abs(A @ tie.x - b).max() <= 1e-8
    unique = solve_weighted_l1_equality(np.eye(2), np.array([1.0, 0.0]), np.array([5.0, 5.0]), SING2)
    assert np.allclose(unique.x, [1.0, 0.0], atol=1e-10)


def test_l1_matches_vertex_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        q = int(rng.integers(1, n))
        A = rng.standard_normal((q, n))
        b = rng.standard_normal(q)
        w = rng.uniform(0.1, 3.0, n)
        best, _ = lp_vertex_optimum(A, b, w)
        sol = solve_weighted_l1_equality(A, b, w, GroupStructure.singletons(n))
        assert sol.converged
        assert np.linalg.norm(A @ sol.x - b) <= 1e-8 * (1 + np.linalg.norm(b))
        assert abs(sol.objective - best) <= 1e-5 * (1 + best)


@pytest.mark.parametrize("seed", range(6))
def test_l1_matches_linear_programming_at_recovery_scale(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((40, 100))
    x0 = np.zeros(100)
    x0[rng.choice(100, 18, replace=False)] = rng.standard_normal(18)
    b = A @ x0
    w = rng.uniform(0.05, 2.0, 100)
    ref, _ = l1_linprog(A, b, w)
    sol = solve_weighted_l1_equality(A, b, w, GroupStructure.singletons(100))
    assert sol.converged
    assert abs(sol.objective - ref) <= 1e-8 * (1 + ref)


def test_group_l1_is_optimal_against_generic_solver():
    rng = np.random.default_rng(5)
    groups = GroupStructure.uniform(6, 2)
    for _ in range(10):
        A = rng.standard_normal((2, 6))
        b = rng.standard_normal(2)
        w = rng.uniform(0.2, 2.0, 3)
        sol = solve_weighted_l1_equality(A, b, w, groups)
        assert sol.converged and sol.kkt_residual <= 1e-6
        # smooth the norms slightly and let a generic constrained solver descend
        def obj(x):
            return float(w @ np.sqrt(groups.sqnorms(x) + 1e-16))
        ref = minimize(obj, sol.x + 0.1, constraints=[{"type": "eq", "fun": lambda x: A @ x - b}],
                       method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
        assert sol.objective <= ref.fun + 1e-7


def test_l1_with_least_squares_loss():
    rng = np.random.default_rng(8)
    for _ in range(10):
        n = 6
        M, y = rng.standard_normal((9, n)), rng.standard_normal(9)
        A, b = rng.standard_normal((2, n)), rng.standard_normal(2)
        w = rng.uniform(0.1, 2.0, n)
        loss = LeastSquares(M, y)
        sol = solve_weighted_l1_equality(A, b, w, GroupStructure.singletons(n), loss=loss)
        assert sol.converged and sol.kkt_residual <= 1e-7

        def obj(x):
            return loss.value(x) + float(w @ np.abs(x))
        # any feasible perturbation is no better
        null = np.linalg.svd(A)[2][2:]
        for _ in range(50):
            x = sol.x + rng.standard_normal(n - 2) @ null * rng.choice([1e-3, 1e-1])
            assert obj(x) >= sol.objective - 1e-9


def test_l1_infeasible_right_hand_side():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(InfeasibleEqualityError):
        solve_weighted_l1_equality(A, np.array([1.0, 2.0]), np.ones(2), SING2)


def test_l1_iteration_cap_reports_unconverged():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((20, 60))
    b = A @ (rng.standard_normal(60) * (rng.random(60) < 0.3))
    # grouped variables: no support polishing, so one ADMM step cannot certify
    sol = solve_weighted_l1_equality(A, b, np.ones(30), GroupStructure.uniform(60, 2),
                                     SolverOptions(max_inner_iter=1))
    assert not sol.converged
    assert np.linalg.norm(A @ sol.x - b) <= 1e-8 * (1 + np.linalg.norm(b))


def test_l1_warm_start_reuses_state():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((15, 40))
    b = A @ (rng.standard_normal(40) * (rng.random(40) < 0.2))
    w = rng.uniform(0.5, 1.5, 40)
    g = GroupStructure.singletons(40)
    cold = solve_weighted_l1_equality(A, b, w, g)
    warm = solve_weighted_l1_equality(A, b, w, g, x0=cold.x, state=cold.state)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-9)
    assert warm.inner_iterations <= cold.inner_iterations


# ------------------------------------------------------------------ crossover

def test_simplex_crossover_from_arbitrary_basis():
    rng = np.random.default_rng(9)
    for _ in range(20):
        A = rng.standard_normal((8, 20))
        b = rng.standard_normal(8)
        w = rng.uniform(0.1, 2.0, 20)
        basis = independent_columns(A, rng.permutation(20))
        out = simplex_crossover(A, b, w, basis)
        assert out is not None
        x, lam, _ = out
        ref, _ = l1_linprog(A, b, w)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * (1 + np.linalg.norm(b))
        assert float(w @ np.abs(x)) == pytest.approx(ref, rel=1e-10)
        # the multiplier certifies optimality: |A^T lam| <= w
        assert np.all(np.abs(A.T @ lam) <= w * (1 + 1e-8))


def test_independent_columns_respects_order():
    A = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    assert list(independent_columns(A, [1, 0, 2])) == [1, 2]


# ------------------------------------------------------------------------ prox

def test_prox_scalar_examples():
    spec = SubproblemSpec(LeastSquares(np.eye(1), [3.0]), [1.0], Mode.ABS,
                          GroupStructure.singletons(1), Free())
    assert solve_prox_subproblem(spec).x == pytest.approx([2.0], abs=1e-9)
    x, _ = grid_argmin(lambda t: 0.5 * (t - 3) ** 2 + abs(t), -5, 5)
    assert x == pytest.approx(2.0, abs=1e-6)
    spec = SubproblemSpec(LeastSquares(np.eye(1), [-3.0]), [1.0], Mode.ABS,
                          GroupStructure.singletons(1), NonNegative())
    assert solve_prox_subproblem(spec).x == pytest.approx([0.0], abs=1e-12)


def test_prox_block_example():
    spec = SubproblemSpec(LeastSquares(np.eye(2), [3.0, 4.0]), [1.0], Mode.ABS,
                          GroupStructure.contiguous([2]), Free())
    x = solve_prox_subproblem(spec).x
    assert np.allclose(x, [2.4, 3.2], atol=1e-9)
    ref = grid_argmin_2d(lambda a, c: 0.5 * ((a - 3) ** 2 + (c - 4) ** 2) + np.hypot(a, c),
                         [0.0, 0.0], 6.0)
    assert np.allclose(ref, [2.4, 3.2], atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0.0, 5.0))
def test_scalar_soft_threshold_matches_grid(v, t):
    x = block_soft_threshold(np.array([v]), np.array([t]), GroupStructure.singletons(1))[0]
    ref, _ = grid_argmin(lambda u: 0.5 * (u - v) ** 2 + t * abs(u), -12, 12, num=2001, refine=6)
    assert abs(x - ref) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.0, 4.0))
def test_block_soft_threshold_matches_grid(v1, v2, t):
    x = block_soft_threshold(np.array([v1, v2]), np.array([t]), GroupStructure.contiguous([2]))
    ref = grid_argmin_2d(lambda a, c: 0.5 * ((a - v1) ** 2 + (c - v2) ** 2) + t * np.hypot(a, c),
                         [0.0, 0.0], 6.0)
    assert np.max(np.abs(x - ref)) <= 1e-6


def test_prox_with_group_box_matches_grid():
    groups = GroupStructure.contiguous([2])
    box = Box(np.array([-0.5, -2.0]), np.array([1.0, 2.0]))
    v, t = np.array([2.0, -1.5]), np.array([0.7])
    x = prox_weighted_norm(v, t, groups, box)

    def obj(a, c):
        inside = (a >= -0.5) & (a <= 1.0) & (c >= -2.0) & (c <= 2.0)
        val = 0.5 * ((a - v[0]) ** 2 + (c - v[1]) ** 2) + t[0] * np.hypot(a, c)
        return np.where(inside, val, np.inf)
    ref = grid_argmin_2d(obj, [0.0, 0.0], 2.5)
    assert np.max(np.abs(x - ref)) <= 1e-6


def test_prox_on_ball_matches_generic_solver():
    rng = np.random.default_rng(2)
    M, y = rng.standard_normal((6, 4)), rng.standard_normal(6) * 3
    ball = L2Ball(np.zeros(4), 0.5)
    w = np.array([0.2, 0.5, 0.1, 0.3])
    spec = SubproblemSpec(LeastSquares(M, y), w, Mode.ABS, GroupStructure.singletons(4), ball)
    sol = solve_prox_subproblem(spec)
    assert sol.converged and np.linalg.norm(sol.x) <= 0.5 + 1e-12
    ref = minimize(lambda x: LeastSquares(M, y).value(x) + w @ np.sqrt(x * x + 1e-14),
                   np.zeros(4), method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda x: 0.25 - x @ x}],
                   options={"ftol": 1e-14, "maxiter": 1000})
    assert sol.objective <= ref.fun + 1e-7


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("con", [Free(), NonNegative(), Box(-np.ones(5), np.ones(5))],
                         ids=["free", "nonneg", "box"])
def test_prox_gradient_is_monotone_and_converges(mode, con):
    rng = np.random.default_rng(6)
    M, y = rng.standard_normal((9, 5)), rng.standard_normal(9) * 2
    spec = SubproblemSpec(LeastSquares(M, y), rng.uniform(0.1, 2.0, 5), mode,
                          GroupStructure.singletons(5), con)
    hist = []
    sol = solve_prox_subproblem(spec, history=hist)
    assert sol.converged
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert sol.kkt_residual <= 1e-7


def test_fixed_step_rule_also_converges():
    rng = np.random.default_rng(7)
    M, y = rng.standard_normal((8, 4)), rng.standard_normal(8)
    spec = SubproblemSpec(LeastSquares(M, y), np.full(4, 0.3), Mode.ABS,
                          GroupStructure.singletons(4), Free())
    a = solve_prox_subproblem(spec, SolverOptions(step_rule="fixed", max_inner_iter=20000))
    b = solve_prox_subproblem(spec)
    assert a.converged and np.allclose(a.x, b.x, atol=1e-6)


def test_prox_rejects_equality_constraints():
    spec = SubproblemSpec(ZeroLoss(2), [1.0, 1.0], Mode.ABS, SING2,
                          LinearEquality([[1.0, 1.0]], [1.0]))
    with pytest.raises(TypeError):
        solve_prox_subproblem(spec)


def test_project_delegates_to_constraint():
    assert np.allclose(project(L2Ball(np.zeros(2), 1.0), np.array([3.0, 4.0])), [0.6, 0.8])


# ---------------------------------------------------------------- routing

def test_solve_subproblem_routes_by_set_and_mode():
    con = LinearEquality([[1.0, 1.0]], [2.0])
    l2 = solve_subproblem(SubproblemSpec(ZeroLoss(2), [1.0, 3.0], Mode.SQUARE, SING2, con))
    assert np.allclose(l2.x, [1.5, 0.5])
    l1 = solve_subproblem(SubproblemSpec(ZeroLoss(2), [1.0, 2.0], Mode.ABS, SING2, con))
    assert np.allclose(l1.x, [2.0, 0.0], atol=1e-8)
    q = Quadratic(np.eye(2), [-3.0, 0.5])
    px = solve_subproblem(SubproblemSpec(q, [1.0, 1.0], Mode.ABS, SING2, Free()))
    assert np.allclose(px.x, [2.0, 0.0], atol=1e-8)


def test_subproblem_weights_validated():
    with pytest.raises(ValueError):
        SubproblemSpec(ZeroLoss(2), [1.0, 0.0], Mode.ABS, SING2, Free())
    with pytest.raises(ValueError):
        SubproblemSpec(ZeroLoss(2), [1.0, math.inf], Mode.ABS, SING2, Free())


# ------------------------------------------------------------------- KKT

def test_kkt_residual_examples():
    con = LinearEquality([[1.0, 1.0]], [2.0])
    spec = SubproblemSpec(ZeroLoss(2), [1.0, 2.0], Mode.ABS, SING2, con)
    assert kkt_residual(spec, np.array([2.0, 0.0])) <= 1e-8
    bad = kkt_residual(spec, np.array([0.0, 1.0 + 1.0]))
    # at (0, 2): slope 2 on x2, subgradient in [-1, 1] on x1, multiplier free
    ref = stationarity_grid([0.0, 2.0], [1.0, 0.0], [1.0, 1.0])
    assert bad == pytest.approx(ref, abs=1e-3)
    assert bad > 0.4


def test_kkt_residual_is_zero_at_closed_form_solution():
    rng = np.random.default_rng(13)
    A, b = rng.standard_normal((3, 7)), rng.standard_normal(3)
    w = rng.uniform(0.1, 2.0, 7)
    g = GroupStructure.singletons(7)
    sol = solve_weighted_l2_equality(A, b, w, g)
    spec = SubproblemSpec(ZeroLoss(7), w, Mode.SQUARE, g, LinearEquality(A, b))
    assert kkt_residual(spec, sol.x) <= 1e-10


def test_kkt_residual_separable_sets():
    # f = 1/2 (x - 3)^2 with w = 1 on [0, 1]: at x = 1, g + w = -1 absorbed by the normal cone
    spec = SubproblemSpec(LeastSquares(np.eye(1), [3.0]), [1.0], Mode.ABS,
                          GroupStructure.singletons(1), Box([0.0], [1.0]))
    assert kkt_residual(spec, np.array([1.0])) == 0.0
    assert kkt_residual(spec, np.array([0.5])) == pytest.approx(1.5)

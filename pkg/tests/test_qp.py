"""QP solver correctness.

Small problems with hand-derived optima pin the conventions (dual
signs, bound handling); randomized convex problems are then accepted
purely on their KKT residuals, which kkt_residuals evaluates from the
problem data without touching solver internals.
"""

import numpy as np
import pytest

from quadwbc.qp import (QpProblem, QpSettings, AdmmQpSolver,
                        kkt_residuals, solve, OPTIMAL, MAX_ITER,
                        INFEASIBLE)


def test_unconstrained_matches_target():
    c = np.array([1.5, -2.0, 0.25])
    p = QpProblem(H=np.eye(3), g=-c)
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert np.max(np.abs(sol.x - c)) < 1e-8


def test_equality_constrained_min_norm():
    # min x.x subject to x1 + x2 = 1 has the symmetric point as optimum
    p = QpProblem(H=2.0 * np.eye(2), g=np.zeros(2),
                  A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert np.max(np.abs(sol.x - 0.5)) < 1e-8
    # stationarity fixes the multiplier: 2x + A^T y = 0
    assert sol.y_eq[0] == pytest.approx(-1.0, abs=1e-6)


def test_active_upper_bound():
    # min (x-2)^2 with 0 <= x <= 1 clamps at the upper bound
    p = QpProblem(H=np.array([[2.0]]), g=np.array([-4.0]),
                  C=np.array([[1.0]]), d_lo=np.array([0.0]),
                  d_hi=np.array([1.0]))
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.y_ineq[0] == pytest.approx(2.0, abs=1e-5)
    assert sol.y_ineq[0] > 0.0


def test_one_sided_bounds():
    # only a lower bound on the first variable binds
    p = QpProblem(H=np.eye(2), g=np.array([3.0, -1.0]),
                  C=np.array([[1.0, 0.0], [0.0, 1.0]]),
                  d_lo=np.array([-1.0, -np.inf]),
                  d_hi=np.array([np.inf, np.inf]))
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(-1.0, abs=1e-7)
    assert sol.x[1] == pytest.approx(1.0, abs=1e-7)
    assert sol.y_ineq[0] < 0.0


def test_kkt_residuals_analytic_optimum():
    p = QpProblem(H=2.0 * np.eye(2), g=np.zeros(2),
                  A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    sol = solve(p)
    sol.x = np.array([0.5, 0.5])
    sol.y_eq = np.array([-1.0])
    res = kkt_residuals(p, sol)
    assert res.stationarity < 1e-10
    assert res.primal_eq < 1e-10
    assert res.primal_ineq == 0.0
    assert res.complementarity == 0.0


def test_kkt_residuals_flag_perturbed_point():
    p = QpProblem(H=2.0 * np.eye(2), g=np.zeros(2),
                  A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    sol = solve(p)
    sol.x = np.array([0.6, 0.5])
    sol.y_eq = np.array([-1.0])
    res = kkt_residuals(p, sol)
    assert res.stationarity > 0.05


def test_validation_errors():
    with pytest.raises(ValueError):
        QpProblem(H=np.array([[1.0, 0.5], [0.0, 1.0]]), g=np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(H=np.eye(1), g=np.zeros(1),
                  C=np.eye(1), d_lo=np.array([2.0]), d_hi=np.array([1.0]))
    with pytest.raises(ValueError):
        QpProblem(H=np.eye(2), g=np.zeros(3))
    with pytest.raises(ValueError):
        QpProblem(H=np.eye(2), g=np.zeros(2), A=np.ones((1, 3)))


def test_infeasible_inequalities_detected():
    # x >= 1 and x <= -1 cannot both hold
    p = QpProblem(H=np.eye(1), g=np.zeros(1),
                  C=np.array([[1.0], [1.0]]),
                  d_lo=np.array([1.0, -np.inf]),
                  d_hi=np.array([np.inf, -1.0]))
    sol = solve(p)
    assert sol.status == INFEASIBLE


def test_infeasible_equalities_detected():
    p = QpProblem(H=np.eye(2), g=np.zeros(2),
                  A=np.array([[1.0, 1.0], [1.0, 1.0]]),
                  b=np.array([1.0, 3.0]))
    sol = solve(p)
    assert sol.status == INFEASIBLE


def test_max_iterations_reported():
    rng = np.random.default_rng(7)
    Q = rng.standard_normal((6, 6))
    H = Q @ Q.T + 1e-3 * np.eye(6)
    p = QpProblem(H=H, g=rng.standard_normal(6),
                  C=rng.standard_normal((4, 6)),
                  d_lo=-np.ones(4), d_hi=np.ones(4))
    solver = AdmmQpSolver(QpSettings(max_iter=2, check_interval=1,
                                     polish=False))
    sol = solver.solve(p)
    assert sol.status == MAX_ITER


def test_cost_scaling_invariance():
    # multiplying (H, g) by a positive factor must not move the optimum
    rng = np.random.default_rng(3)
    Q = rng.standard_normal((5, 5))
    H = Q @ Q.T + 0.5 * np.eye(5)
    g = rng.standard_normal(5)
    A = rng.standard_normal((2, 5))
    b = rng.standard_normal(2)
    C = rng.standard_normal((4, 5))
    d = np.sort(rng.standard_normal((4, 2)), axis=1)
    base = solve(QpProblem(H=H, g=g, A=A, b=b, C=C,
                           d_lo=d[:, 0] - 1.0, d_hi=d[:, 1] + 1.0))
    assert base.status == OPTIMAL
    for alpha in (1e-3, 1e3):
        scaled = solve(QpProblem(H=alpha * H, g=alpha * g, A=A, b=b,
                                 C=C, d_lo=d[:, 0] - 1.0,
                                 d_hi=d[:, 1] + 1.0))
        assert scaled.status == OPTIMAL
        assert np.max(np.abs(scaled.x - base.x)) < 1e-8


@pytest.mark.parametrize("trial", range(20))
def test_random_problems_reach_kkt_tolerance(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(2, 12))
    me = int(rng.integers(0, max(1, n // 2)))
    mi = int(rng.integers(0, 2 * n))
    Q = rng.standard_normal((n, n))
    H = Q @ Q.T + 0.1 * np.eye(n)
    g = rng.standard_normal(n) * 2.0
    A = rng.standard_normal((me, n)) if me else None
    b = rng.standard_normal(me) if me else None
    C = rng.standard_normal((mi, n)) if mi else None
    lo = hi = None
    if mi:
        center = rng.standard_normal(mi)
        width = rng.uniform(0.1, 2.0, mi)
        lo, hi = center - width, center + width
        # sprinkle in some one-sided rows
        lo[rng.random(mi) < 0.25] = -np.inf
        hi[rng.random(mi) < 0.25] = np.inf
    p = QpProblem(H=H, g=g, A=A, b=b, C=C, d_lo=lo, d_hi=hi)
    sol = solve(p)
    assert sol.status == OPTIMAL
    res = kkt_residuals(p, sol)
    assert res.max() <= 1e-6


def test_ill_conditioned_diagonal_hessian():
    # diagonal spread comparable to the controller's worst case
    scales = np.array([1e-6, 1e-3, 1.0, 1e3, 1e6, 1e9])
    H = np.diag(scales)
    g = -scales * np.array([1.0, -2.0, 3.0, -1.0, 2.0, -0.5])
    A = np.zeros((1, 6))
    A[0, :3] = 1.0
    p = QpProblem(H=H, g=g, A=A, b=np.array([1.0]),
                  C=np.eye(6), d_lo=-10 * np.ones(6),
                  d_hi=10 * np.ones(6))
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert kkt_residuals(p, sol).max() <= 1e-6


def test_warm_start_reuses_previous_solution():
    rng = np.random.default_rng(11)
    Q = rng.standard_normal((8, 8))
    H = Q @ Q.T + 0.5 * np.eye(8)
    g = rng.standard_normal(8)
    C = rng.standard_normal((6, 8))
    lo, hi = -np.ones(6), np.ones(6)
    solver = AdmmQpSolver()
    cold = solver.solve(QpProblem(H=H, g=g, C=C, d_lo=lo, d_hi=hi),
                        warm_start=False)
    assert cold.status == OPTIMAL
    # nearby problem: slightly shifted gradient
    warm = solver.solve(QpProblem(H=H, g=g + 0.01, C=C, d_lo=lo,
                                  d_hi=hi))
    assert warm.status == OPTIMAL
    assert warm.iterations <= cold.iterations
    solver.reset()
    cold2 = solver.solve(QpProblem(H=H, g=g + 0.01, C=C, d_lo=lo,
                                   d_hi=hi), warm_start=False)
    assert np.max(np.abs(warm.x - cold2.x)) < 1e-6


def test_equality_only_problem():
    # fully determined by the constraints
    p = QpProblem(H=np.eye(2), g=np.zeros(2),
                  A=np.array([[1.0, 0.0], [0.0, 1.0]]),
                  b=np.array([2.0, -3.0]))
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert np.max(np.abs(sol.x - [2.0, -3.0])) < 1e-7


def test_equal_bounds_row_acts_as_equality():
    p = QpProblem(H=np.eye(2), g=np.array([1.0, 1.0]),
                  C=np.array([[1.0, -1.0]]),
                  d_lo=np.array([0.5]), d_hi=np.array([0.5]))
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert (sol.x[0] - sol.x[1]) == pytest.approx(0.5, abs=1e-7)


def test_dump_roundtrip(tmp_path):
    p = QpProblem(H=np.eye(2), g=np.array([1.0, -2.0]),
                  A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    text = p.dumps()
    assert text.startswith("# qp n=2 m_eq=1 m_ineq=0")
    path = tmp_path / "problem.txt"
    p.dump(str(path))
    assert path.read_text() == text


def test_objective_helper():
    p = QpProblem(H=2.0 * np.eye(2), g=np.array([-2.0, 0.0]))
    assert p.objective(np.array([1.0, 0.0])) == pytest.approx(-1.0)

# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import linprog

from convex_solver import (BarrierSettings, ConvexProgram, InfeasibleProblemError, LinearProgram,
                           SmoothConstraint, SolverFailure, lp_to_program, solve_barrier,
                           solve_convex_restriction)


def _disk(radius: float):
    def fun(Z, derivs):
        val = np.sum(Z * Z, axis=1) - radius ** 2
        if not derivs:
            return val
        hess = np.repeat(2.0 * np.eye(2)[None], Z.shape[0], axis=0)
        return val, 2.0 * Z, hess
    return fun


def test_linear_objective_over_disk():
    prob = ConvexProgram(c=[1.0, 1.0], x0=[0.0, 0.0], smooth=[SmoothConstraint([0, 1], _disk(1.0), 'disk')])
    res = solve_barrier(prob)
    assert res.objective == pytest.approx(-math.sqrt(2.0), abs=1e-6)
    assert_allclose(res.x, [-1 / math.sqrt(2.0)] * 2, atol=1e-5)
    assert res.kkt['primal'] <= 1e-9


def test_phase_one_finds_interior_start():
    # x0 在圆外，但圆与半平面相交
    prob = ConvexProgram(c=[0.0, -1.0], x0=[5.0, 5.0], G=np.array([[1.0, 0.0]]), h=np.array([0.5]),
                         smooth=[SmoothConstraint([0, 1], _disk(1.0))])
    res = solve_barrier(prob)
    assert res.phase1_steps > 0
    assert res.objective == pytest.approx(-1.0, abs=1e-6)


def test_infeasible_program_raises_with_certificate():
    G = np.array([[1.0], [-1.0]])
    h = np.array([-1.0, -1.0])   # x ≤ −1 且 x ≥ 1
    with pytest.raises(InfeasibleProblemError) as exc:
        solve_barrier(ConvexProgram(c=[1.0], x0=[0.0], G=G, h=h))
    assert exc.value.certificate is not None


def test_equality_constraints_respected():
    prob = ConvexProgram(c=[1.0, 2.0], x0=[0.2, 0.2], G=-np.eye(2), h=np.zeros(2),
                         A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    res = solve_barrier(prob)
    assert_allclose(res.x, [1.0, 0.0], atol=1e-6)


def test_barrier_matches_simplex_on_random_lps():
    rng = np.random.default_rng(3)
    for _ in range(5):
        n, m = 4, 6
        A = rng.normal(size=(m, n))
        x_feas = rng.uniform(0.1, 1.0, size=n)
        b = A @ x_feas + rng.uniform(0.1, 1.0, size=m)
        c = rng.normal(size=n)
        lp = LinearProgram(c=c, A_ub=A, b_ub=b, bounds=[(0.0, 2.0)] * n)
        simplex = solve_convex_restriction(lp)
        oracle = linprog(c, A_ub=A, b_ub=b, bounds=[(0.0, 2.0)] * n, method='highs')
        assert simplex.objective == pytest.approx(oracle.fun, abs=1e-8)
        barrier = solve_convex_restriction(lp, BarrierSettings(gap_tol=1e-10), method='barrier')
        assert barrier.objective == pytest.approx(oracle.fun, abs=1e-6)


def test_lp_status_mapping():
    with pytest.raises(InfeasibleProblemError):
        solve_convex_restriction(LinearProgram(c=[1.0], A_ub=np.array([[1.0], [-1.0]]),
                                               b_ub=np.array([-1.0, -1.0]), bounds=[(None, None)]))
    with pytest.raises(SolverFailure):
        solve_convex_restriction(LinearProgram(c=[-1.0], bounds=[(0.0, None)]))


def test_lp_to_program_writes_bounds_as_rows():
    prog = lp_to_program(LinearProgram(c=[1.0, 1.0], bounds=[(0.0, 1.0), (None, 2.0)]))
    assert prog.G.shape == (3, 2)
    assert_allclose(prog.h, [0.0, 1.0, 2.0])


def test_unknown_problem_type():
    with pytest.raises(TypeError):
        solve_convex_restriction({'c': [1.0]})


def _cap(Z, derivs):
    """x² + t − 1 ≤ 0"""
    x, t = Z[:, 0], Z[:, 1]
    val = x * x + t - 1.0
    if not derivs:
        return val
    r = Z.shape[0]
    grad = np.stack([2.0 * x, np.ones(r)], axis=1)
    hess = np.zeros((r, 2, 2))
    hess[:, 0, 0] = 2.0
    return val, grad, hess


def test_phase_one_keeps_epigraph_variables_bounded():
    # z ≤ t ≤ 1 − x²，x ≤ 0.5；t、z 只有上界，起点不可行
    G = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 1.0]])
    h = np.array([0.5, 0.0])
    prob = ConvexProgram(c=[0.0, 0.0, -1.0], x0=[1.0, 5.0, 5.0], G=G, h=h,
                         smooth=[SmoothConstraint([0, 1], _cap, 'cap')])
    res = solve_barrier(prob)
    assert res.phase1_steps > 0
    assert res.objective == pytest.approx(-1.0, abs=1e-6)
    assert_allclose(res.x, [0.0, 1.0, 1.0], atol=1e-4)


def test_phase_one_box_scales_with_start():
    prob = ConvexProgram(c=[0.0, 0.0, -1.0], x0=[1.0, 5.0, 5.0], G=np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 1.0]]),
                         h=np.array([0.5, 0.0]), smooth=[SmoothConstraint([0, 1], _cap, 'cap')])
    tight = solve_barrier(prob, BarrierSettings(phase1_box=10.0))
    assert tight.objective == pytest.approx(-1.0, abs=1e-6)

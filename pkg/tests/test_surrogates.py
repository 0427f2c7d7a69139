# -*- coding: utf-8 -*-
"""航迹子问题代理函数：展开点处相切、全局下界、几何约束线性化"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from baselines import heuristic_plan
from channel import gain_constants
from sca_offline import (SurrogatePoint, build_geometry_constraints, build_r1_llb, build_r2_lb, exact_r1,
                         exact_r2, phi_hessian)


@pytest.fixture
def point_and_plan(small_scenario, small_profile):
    plan = heuristic_plan('UC', small_scenario, small_profile)
    return SurrogatePoint.from_plan(plan, small_scenario), plan


def _perturbed(plan, scenario, rng, scale=40.0):
    q = plan.waypoints.copy()
    q[:, 1:scenario.num_slots] += rng.normal(0.0, scale, size=q[:, 1:scenario.num_slots].shape)
    return q


def test_r1_tangent_at_reference(point_and_plan, small_scenario):
    point, plan = point_and_plan
    r1 = build_r1_llb(point, small_scenario)
    exact = exact_r1(plan.waypoints, plan.power, small_scenario)
    assert_allclose(r1.evaluate(plan.waypoints), exact, rtol=0, atol=1e-9)


def test_r1_is_global_lower_bound(point_and_plan, small_scenario, rng):
    point, plan = point_and_plan
    r1 = build_r1_llb(point, small_scenario)
    for _ in range(5):
        q = _perturbed(plan, small_scenario, rng)
        exact = exact_r1(q, plan.power, small_scenario)
        assert np.all(r1.evaluate(q) <= exact + 1e-9)


def test_y_upper_dominates_where_power_positive(point_and_plan, small_scenario, rng):
    point, plan = point_and_plan
    r1 = build_r1_llb(point, small_scenario)
    mask = np.broadcast_to((plan.power.T > 0)[None], r1.bk.shape)
    for _ in range(5):
        q = _perturbed(plan, small_scenario, rng, scale=80.0)
        y_true = np.transpose(SurrogatePoint.at(q, plan.power, plan.association, small_scenario).Y_r, (0, 2, 1))
        y_up = r1.y_upper(q)
        assert np.all(y_up[mask] >= y_true[mask] - 1e-9)


def test_r2_exact_at_reference_and_lower_elsewhere(point_and_plan, small_scenario):
    point, plan = point_and_plan
    r2 = build_r2_lb(point, small_scenario)
    exact = exact_r2(plan.waypoints, plan.power, small_scenario)
    M, K, N = point.X_r.shape
    for m in range(M):
        for n in (0, N // 2, N - 1):
            for k in range(K):
                at_ref = r2.evaluate(k, n, point.X_r[m, :, n], point.Y_r[m, :, n])
                assert at_ref == pytest.approx(exact[m, k, n], abs=1e-9)
                lower = r2.evaluate(k, n, 0.9 * point.X_r[m, :, n], np.maximum(0.9 * point.Y_r[m, :, n], 1.0))
                assert lower <= at_ref + 1e-12


def test_geometry_linearizations_are_under_estimators(point_and_plan, small_scenario, rng):
    point, plan = point_and_plan
    geo = build_geometry_constraints(point, small_scenario)
    H = small_scenario.altitude
    assert_allclose(geo.u_bound(plan.waypoints), point.U_r, rtol=1e-12, atol=1e-9)
    q = _perturbed(plan, small_scenario, rng)
    true = SurrogatePoint.at(q, plan.power, plan.association, small_scenario)
    assert np.all(geo.u_bound(q) <= true.U_r + 1e-9)
    assert np.all(geo.x_bound(q) <= true.U_r + H * H + 1e-9)
    assert np.all(geo.y_bound(true.theta_r) <= true.Y_r + 1e-9)
    N = small_scenario.num_slots
    dist2 = np.sum((q[0, 1:N] - q[1, 1:N]) ** 2, axis=-1)
    assert np.all(geo.separation_lhs(q)[0, 1] <= dist2 + 1e-6)


def test_geometry_check_reports_violations(point_and_plan, small_scenario):
    point, plan = point_and_plan
    geo = build_geometry_constraints(point, small_scenario)
    assert geo.check(plan.waypoints) == []
    too_far = point.X_r + 10.0
    kinds = {v.constraint for v in geo.check(plan.waypoints, x_tilde=too_far)}
    assert kinds == {'x-tilde'}


def test_phi_hessian_positive_semidefinite(small_scenario):
    c1, c2, c3 = gain_constants(small_scenario)
    norm = small_scenario.altitude ** 2 * small_scenario.noise_power
    c12, c3n = c1 * c2 / norm, c3 / norm
    x, y = np.meshgrid(np.logspace(0, 4, 50), np.logspace(0, 2, 50), indexing='ij')
    hess = phi_hessian(x, y, c12, c3n)
    eig = np.linalg.eigvalsh(hess)
    assert np.all(eig >= -1e-12)


def test_phi_hessian_matches_finite_differences(small_scenario):
    c12, c3 = 3.0, 0.7

    def phi(x, y):
        return np.log(c12 / (x * y) + c3 / x)

    h = 1e-4
    for x, y in ((1.5, 2.0), (10.0, 1.2), (4.0, 30.0)):
        fxx = (phi(x + h, y) - 2 * phi(x, y) + phi(x - h, y)) / h ** 2
        fyy = (phi(x, y + h) - 2 * phi(x, y) + phi(x, y - h)) / h ** 2
        fxy = (phi(x + h, y + h) - phi(x + h, y - h) - phi(x - h, y + h) + phi(x - h, y - h)) / (4 * h * h)
        H = phi_hessian(x, y, c12, c3)
        assert_allclose(H, [[fxx, fxy], [fxy, fyy]], rtol=1e-4, atol=1e-6)

# -*- coding: utf-8 -*-
import numpy as np
import pytest
from numpy.testing import assert_allclose

from baselines import (HeuristicKind, circle_tour, exhaustive_power, heuristic_plan, heuristic_trajectory,
                       moving_slots, nearest_association, relieve_capacity)
from energy import check_energy_feasible, evolve_battery, synth_profile
from scenario import default_scenario, validate_plan


@pytest.mark.parametrize('kind', [k.value for k in HeuristicKind])
def test_heuristic_plans_are_feasible(kind, scenario, bell_profile):
    plan = heuristic_plan(kind, scenario, bell_profile)
    assert validate_plan(scenario, plan, profile=bell_profile) == []
    assert_allclose(plan.waypoints[:, 0], scenario.uav_initials)
    assert_allclose(plan.waypoints[:, -1], scenario.uav_initials)


def test_moving_slots_spread_over_mission(scenario):
    slots = moving_slots([540.0], scenario)
    assert len(slots) == 10
    assert np.all(np.diff(slots) > 0)
    assert slots[0] >= 0 and slots[-1] < scenario.num_slots


def test_path_too_long_for_horizon():
    short = default_scenario(num_slots=5, horizon_seconds=300.0)
    with pytest.raises(ValueError, match='N='):
        heuristic_trajectory('UC', short)


def test_two_uav_heuristics_only():
    three = default_scenario(uav_initials=((0.0, 300.0), (600.0, 300.0), (300.0, 0.0)))
    with pytest.raises(ValueError):
        heuristic_trajectory('CC', three)
    q = circle_tour(three, radius=60.0)
    assert q.shape == (3, three.num_slots + 1, 2)


def test_unknown_kind_rejected(scenario):
    with pytest.raises(ValueError):
        heuristic_trajectory('ZIGZAG', scenario)


def test_nearest_association_only_while_hovering(scenario):
    q = heuristic_trajectory('UC', scenario)
    a = nearest_association(q, scenario)
    moving = np.linalg.norm(np.diff(q, axis=1), axis=-1) > 1e-6
    assert a.sum(axis=1)[moving].sum() == 0
    assert np.all(a.sum(axis=0) <= 1) and np.all(a.sum(axis=1) <= 1)
    # 悬停且节点数 ≥ UAV 数时每架 UAV 都有服务对象
    hovering_both = ~moving.any(axis=0)
    assert np.all(a.sum(axis=(1,))[:, hovering_both] == 1)


def test_nearest_association_tie_prefers_lower_uav():
    sc = default_scenario(num_nodes=1, num_slots=4, horizon_seconds=240.0)
    q = np.repeat(sc.uav_initials[:, None, :], 5, axis=1)   # 两架 UAV 与节点 (300,300) 等距
    a = nearest_association(q, sc)
    assert np.all(a[0, 0] == 1) and a[1].sum() == 0


def test_exhaustive_power_drains_battery(scenario, bell_profile):
    a = heuristic_plan('UC', scenario, bell_profile).association
    P = exhaustive_power(bell_profile, a, scenario)
    ledger = evolve_battery(P, bell_profile, scenario)
    served = a.sum(axis=0) > 0
    spent = P * scenario.slot_seconds
    assert_allclose(spent[served], ledger.battery[:, :-1][served], rtol=1e-12)
    assert np.all(P[~served] == 0.0)


@pytest.fixture
def far_node_scenario():
    """第三个节点离两条 UC 圆都比各自的近节点远，最近关联永远不会服务它"""
    return default_scenario(node_positions=((200.0, 300.0), (400.0, 300.0), (300.0, 580.0)),
                            num_slots=40, horizon_seconds=2400.0)


def test_nearest_association_overflows_never_served_node(far_node_scenario):
    profile = synth_profile('constant', 800.0, far_node_scenario)
    q = heuristic_trajectory('UC', far_node_scenario)
    a = nearest_association(q, far_node_scenario)
    assert a[:, 2].sum() == 0
    found = check_energy_feasible(exhaustive_power(profile, a, far_node_scenario), profile, far_node_scenario)
    assert ('battery-capacity', 2) in {(v.constraint, v.indices[0]) for v in found}


def test_capacity_relief_serves_high_harvest_node(far_node_scenario):
    profile = synth_profile('constant', 800.0, far_node_scenario)
    plan = heuristic_plan('UC', far_node_scenario, profile)
    assert validate_plan(far_node_scenario, plan, profile=profile) == []
    assert plan.association[:, 2].sum() >= 1
    ledger = evolve_battery(plan.power, profile, far_node_scenario)
    assert ledger.battery.max() <= far_node_scenario.battery_capacity + 1e-9


def test_capacity_relief_is_noop_with_spill(far_node_scenario):
    spill = far_node_scenario.with_overrides(battery_spill=True)
    profile = synth_profile('constant', 800.0, spill)
    q = heuristic_trajectory('UC', spill)
    a = nearest_association(q, spill)
    assert np.array_equal(relieve_capacity(a, q, profile, spill), a)
    P = exhaustive_power(profile, a, spill)
    assert check_energy_feasible(P, profile, spill) == []
    assert P.max() * spill.slot_seconds <= spill.battery_capacity + 1e-9

# -*- coding: utf-8 -*-
import numpy as np
import pytest
from numpy.testing import assert_allclose

from channel import ChannelRealization
from energy import HarvestProfile
from rate import (RateReport, average_report, evaluate_plan, replay_plan, sinr, sinr_matrix, slot_rate,
                  spectral_efficiency)
from scenario import stationary_plan


def test_sinr_single_node_is_snr():
    assert sinr([2.0], [1e-9], 0, 1e-11) == pytest.approx(200.0)


def test_sinr_counts_other_nodes_as_interference():
    gamma = sinr([1.0, 1.0], [2e-9, 1e-9], 0, 1e-9)
    assert gamma == pytest.approx(2e-9 / (1e-9 + 1e-9))
    M = sinr_matrix([1.0, 1.0], np.array([[2e-9, 1e-9]]), 1e-9)
    assert M[0, 0] == pytest.approx(gamma)


def test_hand_computed_slot_rate(small_scenario):
    W, s2 = small_scenario.bandwidth, small_scenario.noise_power
    a = np.array([[1, 0], [0, 1]])
    g = np.array([[4e-10, 1e-10], [2e-10, 3e-10]])
    P = np.array([0.1, 0.2])
    r = slot_rate(a, P, g, small_scenario)
    expected0 = W * np.log2(1 + 0.1 * 4e-10 / (0.2 * 1e-10 + s2))
    expected1 = W * np.log2(1 + 0.2 * 3e-10 / (0.1 * 2e-10 + s2))
    assert_allclose(r, [expected0, expected1], rtol=1e-12)


def test_unserved_node_has_zero_rate(small_scenario):
    a = np.array([[1, 0], [0, 0]])
    se = spectral_efficiency(a, [0.1, 0.1], np.full((2, 2), 1e-10), small_scenario.noise_power)
    assert se[1] == 0.0 and se[0] > 0.0


def test_invalid_association_rejected(small_scenario):
    with pytest.raises(ValueError):
        spectral_efficiency(np.array([[1, 1], [0, 0]]), [0.1, 0.1], np.full((2, 2), 1e-10), 1e-11)
    with pytest.raises(ValueError):
        spectral_efficiency(np.array([[1, 0], [1, 0]]), [0.1, 0.1], np.full((2, 2), 1e-10), 1e-11)


def test_stationary_plan_rates_zero(small_scenario):
    report = average_report(stationary_plan(small_scenario), small_scenario)
    assert report.per_slot.shape == (2, 20)
    assert report.worst == 0.0


def test_report_summary_and_frame(tmp_path):
    report = RateReport(per_slot=np.array([[1.0, 2.0], [0.5, 0.5]]), slot_seconds=60.0)
    assert_allclose(report.totals, [3.0, 1.0])
    assert report.worst == 1.0
    assert_allclose(report.bits, [180.0, 60.0])
    assert report.summary()['worst_node'] == 1
    frame = report.to_frame()
    assert list(frame.columns) == ['node', 'slot', 'rate_bps']
    assert len(frame) == 4
    report.to_csv(str(tmp_path / 'r.csv'))
    report.to_json(str(tmp_path / 'r.json'))


def _serving_plan(scenario):
    plan = stationary_plan(scenario)
    a = plan.association.copy()
    p = plan.power.copy()
    a[0, 0, :] = 1
    p[0, :] = 1.0
    return plan.replace(association=a, power=p)


def test_evaluate_plan_uses_given_table(small_scenario):
    plan = _serving_plan(small_scenario)
    table = np.full((2, 2, 20), 1e-10)
    report = evaluate_plan(plan, table, small_scenario)
    expected = small_scenario.bandwidth * np.log2(1 + 1e-10 / small_scenario.noise_power)
    assert_allclose(report.per_slot[0], expected)
    with pytest.raises(ValueError):
        evaluate_plan(plan, np.ones((2, 2, 3)), small_scenario)


def test_replay_clips_power_to_battery(small_scenario):
    plan = _serving_plan(small_scenario)
    harvest = HarvestProfile(np.full((2, 20), 30.0))
    gains = np.full((2, 2, 20), 1e-10)
    report, executed = replay_plan(plan, ChannelRealization(gains, np.ones((2, 2, 20), dtype=bool)),
                                   harvest, small_scenario)
    # 计划 60 J/时隙，每时隙只有 30 J
    assert_allclose(executed[0], 0.5)
    assert_allclose(executed[1], 0.0)
    assert report.worst == 0.0


def test_rate_grows_with_own_power_and_falls_with_interference(small_scenario):
    a = np.array([[1, 0], [0, 1]])
    g = np.array([[4e-10, 1e-10], [2e-10, 3e-10]])
    own = [slot_rate(a, [p, 0.2], g, small_scenario)[0] for p in (0.05, 0.1, 0.4, 1.0)]
    assert np.all(np.diff(own) > 0)
    hit = [slot_rate(a, [0.1, p], g, small_scenario)[0] for p in (0.0, 0.1, 0.4, 1.0)]
    assert np.all(np.diff(hit) < 0)
    # 无干扰时退化为 W·log2(1 + SNR)
    alone = small_scenario.bandwidth * np.log2(1 + 0.1 * 4e-10 / small_scenario.noise_power)
    assert hit[0] == pytest.approx(alone, rel=1e-12)


def test_worst_node_is_minimum_of_totals(small_scenario):
    plan = _serving_plan(small_scenario)
    a = plan.association.copy()
    p = plan.power.copy()
    a[1, 1, ::2] = 1
    p[1, ::2] = 0.5
    plan = plan.replace(association=a, power=p)
    report = evaluate_plan(plan, np.full((2, 2, 20), 1e-10), small_scenario)
    assert report.worst == pytest.approx(report.totals.min())
    assert report.totals[1] < report.totals[0]

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SINR、时隙速率、累计速率与 max-min 目标

速率单位为 bits/s；累计量沿用逐时隙求和（bits/s·slot），乘 δ 得到比特数。
log2(1 + x) 一律经 log1p 计算。
"""

import json
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import pandas as pd

from channel import ChannelRealization, average_gain_grid
from scenario import Scenario, Plan, check_plan_shape

LN2 = np.log(2.0)


def log2_1p(x):
    return np.log1p(x) / LN2


def sinr(powers, gains_to_uav, served_k: int, noise: float) -> float:
    """P_k·H_k / (Σ_{i≠k} P_i·H_i + σ²)"""
    p = np.asarray(powers, dtype=float)
    h = np.asarray(gains_to_uav, dtype=float)
    received = p * h
    interference = float(np.sum(np.delete(received, served_k))) if len(p) > 1 else 0.0
    return float(received[served_k] / (interference + noise))


def _check_slot_association(a: np.ndarray):
    if np.any((a != 0) & (a != 1)):
        raise ValueError("关联必须为 0/1")
    if np.any(a.sum(axis=1) > 1):
        raise ValueError("关联违反：一架 UAV 同一时隙服务多个节点")
    if np.any(a.sum(axis=0) > 1):
        raise ValueError("关联违反：一个节点同一时隙被多架 UAV 服务")


def sinr_matrix(powers, gains: np.ndarray, noise: float) -> np.ndarray:
    """M × K：UAV m 接收节点 k 时的 SINR（其余全部节点视为干扰）"""
    p = np.asarray(powers, dtype=float)
    received = np.asarray(gains, dtype=float) * p[None, :]
    K = received.shape[1]
    others = 1.0 - np.eye(K)
    interference = received @ others
    return received / (interference + noise)


def spectral_efficiency(association, powers, gains, noise: float, check: bool = True) -> np.ndarray:
    """K 维 bits/s/Hz：Σ_m a_{m,k}·log2(1 + Γ_{m,k})"""
    a = np.asarray(association)
    if check:
        _check_slot_association(a)
    gamma = sinr_matrix(powers, gains, noise)
    return np.sum(np.where(a == 1, log2_1p(gamma), 0.0), axis=0)


def slot_rate(association, powers, gains, scenario: Scenario) -> np.ndarray:
    """时隙 n 的节点速率 R_{k,n} (bits/s)；association/gains 为 M × K"""
    return scenario.bandwidth * spectral_efficiency(association, powers, gains, scenario.noise_power)


@dataclass(frozen=True, eq=False)
class RateReport:
    per_slot: np.ndarray        # K × N, bits/s
    slot_seconds: float

    @property
    def totals(self) -> np.ndarray:
        return self.per_slot.sum(axis=1)

    @property
    def worst(self) -> float:
        return float(self.totals.min())

    @property
    def bits(self) -> np.ndarray:
        return self.totals * self.slot_seconds

    def to_frame(self) -> pd.DataFrame:
        K, N = self.per_slot.shape
        node, slot = np.meshgrid(np.arange(K), np.arange(N), indexing='ij')
        return pd.DataFrame({'node': node.ravel(), 'slot': slot.ravel(), 'rate_bps': self.per_slot.ravel()})

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)

    def summary(self) -> dict:
        return {
            'worst': self.worst,
            'worst_node': int(np.argmin(self.totals)),
            'totals': self.totals.tolist(),
            'bits': self.bits.tolist(),
            'mean': float(self.totals.mean()),
        }

    def to_json(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.summary(), f, indent=2)


def _gain_table(gains, plan: Plan, scenario: Scenario) -> np.ndarray:
    if isinstance(gains, ChannelRealization):
        table = gains.gains
    else:
        table = np.asarray(gains, dtype=float)
    expected = (scenario.num_uavs, scenario.num_nodes, scenario.num_slots)
    if table.shape != expected:
        raise ValueError(f"增益表维度 {table.shape} 与 {expected} 不符")
    return table


def evaluate_plan(plan: Plan, gains: Union[ChannelRealization, np.ndarray], scenario: Scenario) -> RateReport:
    """逐时隙计算速率并累加；gains 可为瞬时实现或 M × K × N 平均增益"""
    check_plan_shape(scenario, plan)
    table = _gain_table(gains, plan, scenario)
    N = scenario.num_slots
    per_slot = np.zeros((scenario.num_nodes, N))
    for n in range(N):
        per_slot[:, n] = slot_rate(plan.association[:, :, n], plan.power[:, n], table[:, :, n], scenario)
    return RateReport(per_slot=per_slot, slot_seconds=scenario.slot_seconds)


def average_report(plan: Plan, scenario: Scenario) -> RateReport:
    """平均信道下的速率报告（离线目标）"""
    return evaluate_plan(plan, average_gain_grid(plan.waypoints, scenario), scenario)


def replay_plan(plan: Plan, realization: ChannelRealization, harvest, scenario: Scenario) -> Tuple[RateReport, np.ndarray]:
    """在线执行固定计划：功率按实际电量截断，返回 (速率报告, 实际功率 K × N)"""
    check_plan_shape(scenario, plan)
    delta = scenario.slot_seconds
    ext = harvest.extended()
    K, N = plan.power.shape
    battery = np.minimum(ext[:, 0], scenario.battery_capacity)
    executed = np.zeros((K, N))
    per_slot = np.zeros((K, N))
    for n in range(N):
        spend = np.minimum(plan.power[:, n] * delta, battery)
        executed[:, n] = spend / delta
        per_slot[:, n] = slot_rate(plan.association[:, :, n], executed[:, n], realization.gains[:, :, n], scenario)
        battery = np.minimum(battery - spend + ext[:, n + 1], scenario.battery_capacity)
    return RateReport(per_slot=per_slot, slot_seconds=delta), executed

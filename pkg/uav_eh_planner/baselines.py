#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
启发式对比方法：固定航线 (UC / CC / SLC) + 最近节点关联 + 耗尽式功率控制

航线按弧长参数化为闭合曲线（起止于 UAV 起点）。服务时必须悬停，因此每条航线只在
最少的“飞行时隙”内以 SPEED_FRACTION·V_max 飞完，其余时隙悬停；各 UAV 的飞行时隙
同步，均匀分布在整个任务期内。
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from energy import HarvestProfile, prefix_ledger
from scenario import Scenario, Plan, GEOM_TOL, ENERGY_TOL

UC_RADIUS = 120.0
CC_RADIUS = 250.0
SLC_LEG = 100.0
SLC_RADIUS = 70.0
SPEED_FRACTION = 0.9


class HeuristicKind(str, Enum):
    UC = 'UC'     # 不相交圆
    CC = 'CC'     # 相交圆
    SLC = 'SLC'   # 直线 + 圆


@dataclass(frozen=True)
class _Segment:
    kind: str                 # 'line' | 'arc'
    start: np.ndarray
    end: np.ndarray = None
    center: np.ndarray = None
    radius: float = 0.0
    phi0: float = 0.0
    sweep: float = 0.0

    @property
    def length(self) -> float:
        if self.kind == 'line':
            return float(np.linalg.norm(self.end - self.start))
        return abs(self.sweep) * self.radius

    def point(self, s: float) -> np.ndarray:
        if self.kind == 'line':
            L = self.length
            return self.start + (self.end - self.start) * (s / L if L > 0 else 0.0)
        phi = self.phi0 + math.copysign(s / self.radius, self.sweep)
        return self.center + self.radius * np.array([math.cos(phi), math.sin(phi)])


class ClosedPath:
    """首尾相接的线段/圆弧序列，按弧长取点"""

    def __init__(self, segments: Sequence[_Segment]):
        self.segments = list(segments)
        self.lengths = np.array([seg.length for seg in self.segments])
        self.length = float(self.lengths.sum())
        self.start = np.array(self.segments[0].start, dtype=float)

    def point(self, s: float) -> np.ndarray:
        if s >= self.length:
            return self.start.copy()
        for seg, L in zip(self.segments, self.lengths):
            if s <= L:
                return seg.point(s)
            s -= L
        return self.start.copy()


def _heading(scenario: Scenario, m: int) -> np.ndarray:
    """起点指向区域中心的单位向量"""
    d = scenario.area_center - scenario.uav_initials[m]
    norm = np.linalg.norm(d)
    return d / norm if norm > 1e-9 else np.array([1.0, 0.0])


def _circle(start: np.ndarray, u: np.ndarray, radius: float, orientation: int) -> _Segment:
    center = start + radius * u
    back = start - center
    return _Segment('arc', start=start, center=center, radius=radius,
                    phi0=math.atan2(back[1], back[0]), sweep=2.0 * math.pi * orientation)


def circle_path(scenario: Scenario, m: int, radius: float, orientation: int) -> ClosedPath:
    ini = scenario.uav_initials[m].astype(float)
    return ClosedPath([_circle(ini, _heading(scenario, m), radius, orientation)])


def line_circle_path(scenario: Scenario, m: int, leg: float, radius: float, orientation: int) -> ClosedPath:
    ini = scenario.uav_initials[m].astype(float)
    u = _heading(scenario, m)
    turn = ini + leg * u
    return ClosedPath([
        _Segment('line', start=ini, end=turn),
        _circle(turn, u, radius, orientation),
        _Segment('line', start=turn, end=ini),
    ])


def moving_slots(path_lengths: Sequence[float], scenario: Scenario,
                 speed_fraction: float = SPEED_FRACTION) -> np.ndarray:
    """同步飞行时隙下标；航线太长时报错并给出所需时隙数"""
    step = speed_fraction * scenario.v_max * scenario.slot_seconds
    longest = max(path_lengths) if len(path_lengths) else 0.0
    n_move = int(math.ceil(longest / step - 1e-12)) if longest > 0 else 0
    N = scenario.num_slots
    if n_move > N:
        raise ValueError(f"航线长 {longest:.1f} m 需要至少 N={n_move} 个时隙（δ={scenario.slot_seconds:.1f}s），"
                         f"当前 N={N}；或任务时长至少 {longest / (speed_fraction * scenario.v_max):.0f}s")
    return np.array([int(math.floor((j + 0.5) * N / n_move)) for j in range(n_move)], dtype=int)


def tour_waypoints(paths: Sequence[ClosedPath], scenario: Scenario,
                   speed_fraction: float = SPEED_FRACTION) -> np.ndarray:
    """沿各自闭合航线同步飞行，其余时隙悬停；检查防撞距离"""
    M, N = scenario.num_uavs, scenario.num_slots
    if len(paths) != M:
        raise ValueError(f"航线数 {len(paths)} ≠ UAV 数 {M}")
    slots = moving_slots([p.length for p in paths], scenario, speed_fraction)
    is_moving = np.zeros(N, dtype=bool)
    is_moving[slots] = True
    q = np.zeros((M, N + 1, 2))
    for m, path in enumerate(paths):
        ds = path.length / max(len(slots), 1)
        s = 0.0
        moved = 0
        q[m, 0] = scenario.uav_initials[m]
        for n in range(N):
            if is_moving[n]:
                moved += 1
                s = ds * moved
                q[m, n + 1] = path.point(s) if moved < len(slots) else scenario.uav_initials[m]
            else:
                q[m, n + 1] = q[m, n]
        q[m, N] = scenario.uav_initials[m]
    for m in range(M):
        for j in range(m + 1, M):
            gap = np.linalg.norm(q[m, 1:N] - q[j, 1:N], axis=-1)
            if gap.size and gap.min() < scenario.d_min:
                n = int(np.argmin(gap)) + 1
                raise ValueError(f"航线 UAV {m}/{j} 在时隙 {n} 间距 {gap.min():.1f} m < D_min={scenario.d_min}")
    return q


def circle_tour(scenario: Scenario, radius: float = UC_RADIUS, orientations: Optional[Sequence[int]] = None,
                speed_fraction: float = SPEED_FRACTION) -> np.ndarray:
    """任意 M 的悬停感知圆形巡航（起点在圆上，圆心偏向区域中心）"""
    M = scenario.num_uavs
    if orientations is None:
        orientations = [1 if m % 2 == 0 else -1 for m in range(M)]
    paths = [circle_path(scenario, m, radius, orientations[m]) for m in range(M)]
    return tour_waypoints(paths, scenario, speed_fraction)


def heuristic_trajectory(kind, scenario: Scenario, speed_fraction: float = SPEED_FRACTION) -> np.ndarray:
    kind = HeuristicKind(kind)
    if scenario.num_uavs != 2:
        raise ValueError(f"{kind.value} 航线只为两架 UAV 定义，当前 M={scenario.num_uavs}")
    if kind is HeuristicKind.UC:
        return circle_tour(scenario, UC_RADIUS, (1, -1), speed_fraction)
    if kind is HeuristicKind.CC:
        return circle_tour(scenario, CC_RADIUS, (1, 1), speed_fraction)
    paths = [line_circle_path(scenario, m, SLC_LEG, SLC_RADIUS, 1 if m == 0 else -1) for m in range(2)]
    return tour_waypoints(paths, scenario, speed_fraction)


def nearest_association(waypoints, scenario: Scenario, tol: float = GEOM_TOL) -> np.ndarray:
    """悬停中的 UAV 按距离贪心配对：更近者优先，平局取较小 UAV 下标，其次较小节点下标"""
    q = np.asarray(waypoints, dtype=float)
    M, K, N = scenario.num_uavs, scenario.num_nodes, scenario.num_slots
    nodes = scenario.node_positions
    a = np.zeros((M, K, N), dtype=np.int8)
    step = np.linalg.norm(np.diff(q, axis=1), axis=-1)
    for n in range(N):
        hovering = [m for m in range(M) if step[m, n] <= tol]
        if not hovering:
            continue
        pairs = []
        for m in hovering:
            dist = np.linalg.norm(nodes - q[m, n], axis=-1)
            pairs.extend((float(dist[k]), m, k) for k in range(K))
        pairs.sort()
        taken_uav, taken_node = set(), set()
        for _, m, k in pairs:
            if m in taken_uav or k in taken_node:
                continue
            a[m, k, n] = 1
            taken_uav.add(m)
            taken_node.add(k)
    return a


def exhaustive_power(profile: HarvestProfile, association, scenario: Scenario) -> np.ndarray:
    """被调度的节点在该时隙用光当前电量；未被调度的节点不发射"""
    a = np.asarray(association)
    delta = scenario.slot_seconds
    ext = profile.extended()
    K, N = scenario.num_nodes, scenario.num_slots
    served = a.sum(axis=0) > 0
    P = np.zeros((K, N))
    cap = scenario.battery_capacity
    battery = np.minimum(ext[:, 0], cap)
    for n in range(N):
        spend = np.where(served[:, n], battery, 0.0)
        P[:, n] = spend / delta
        battery = np.minimum(battery - spend + ext[:, n + 1], cap)
    return P


def relieve_capacity(association, waypoints, profile: HarvestProfile, scenario: Scenario,
                      tol: float = GEOM_TOL) -> np.ndarray:
    """严格容量模式下修补关联，使耗尽式功率不让任何电池越过 B_max

    找到第一处越限 (k, j)，把 j 之前最晚一个 k 未被服务的悬停时隙改派给 k：
    优先空闲 UAV，否则离 k 最近的悬停 UAV；每个 (UAV, 时隙) 至多改派一次。
    溢出模式下原样返回。
    """
    a = np.array(association, dtype=np.int8, copy=True)
    if scenario.battery_spill:
        return a
    q = np.asarray(waypoints, dtype=float)
    K, N = scenario.num_nodes, scenario.num_slots
    step = np.linalg.norm(np.diff(q, axis=1), axis=-1)
    ext = profile.extended()
    fixed = set()
    for _ in range(K * N):
        level = prefix_ledger(exhaustive_power(profile, a, scenario) * scenario.slot_seconds, ext)
        over = level - scenario.battery_capacity > ENERGY_TOL
        if not over.any():
            break
        j = int(np.nonzero(over.any(axis=0))[0][0])
        k = int(np.nonzero(over[:, j])[0][0])
        moved = False
        for l in range(j - 1, -1, -1):
            if a[:, k, l].any():
                continue
            free = [m for m in np.nonzero(step[:, l] <= tol)[0] if (m, l) not in fixed]
            if not free:
                continue
            idle = [m for m in free if not a[m, :, l].any()]
            m = idle[0] if idle else min(free, key=lambda i: np.linalg.norm(q[i, l] - scenario.node_positions[k]))
            a[m, :, l] = 0
            a[m, k, l] = 1
            fixed.add((m, l))
            moved = True
            break
        if not moved:
            break
    return a


def heuristic_plan(kind, scenario: Scenario, profile: HarvestProfile) -> Plan:
    q = heuristic_trajectory(kind, scenario)
    a = nearest_association(q, scenario)
    a = relieve_capacity(a, q, profile, scenario)
    return Plan(waypoints=q, association=a, power=exhaustive_power(profile, a, scenario))

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
问题实例 (Scenario) 与联合解 (Plan)

- Scenario：节点位置、UAV 起点、物理与无线参数、时隙划分（不可变）
- Plan：每时隙航点、UAV-节点关联矩阵、节点发射功率（不可变）
- validate_plan：逐条检查端点 / 速度 / 防撞 / 关联 / 悬停 / 功率 / 能量约束
- load_scenario：从 JSON 文档（或内联文本）构造场景，缺省值取城区 600 m × 600 m 设置

内部一律使用 SI 单位；dBm 只在 load_scenario 中换算。
"""

import os
import json
import math
from dataclasses import dataclass, field, replace, asdict
from typing import Dict, List, Optional, Tuple, Union, Mapping

import numpy as np
import pandas as pd

from channel import ChannelParams, dbm_to_watts, watts_to_dbm

# ===== 默认参数 =====
AREA_SIZE = 600.0             # m, 正方形区域边长
ALTITUDE = 150.0              # m
HORIZON_SECONDS = 6000.0      # 100 min
NUM_SLOTS = 100
V_MAX = 1.0                   # m/s
D_MIN = 100.0                 # m
BANDWIDTH = 5e6               # Hz
CARRIER_HZ = 2.4e9
LIGHT_SPEED = 3e8
NOISE_POWER_DBM = -80.0
BATTERY_CAPACITY = 1500.0     # J
PANEL_AREA = 0.01             # m², 10 cm × 10 cm
PANEL_EFFICIENCY = 0.2

UAV_INITIALS = ((0.0, 300.0), (600.0, 300.0))

# K = 6 取自实验设置，其余 K 为仓库自选布局
NODE_LAYOUTS: Dict[int, Tuple[Tuple[float, float], ...]] = {
    1: ((300.0, 300.0),),
    2: ((200.0, 300.0), (400.0, 300.0)),
    3: ((200.0, 200.0), (400.0, 200.0), (300.0, 450.0)),
    4: ((200.0, 200.0), (200.0, 400.0), (400.0, 200.0), (400.0, 400.0)),
    5: ((200.0, 200.0), (200.0, 400.0), (400.0, 200.0), (400.0, 400.0), (300.0, 300.0)),
    6: ((200.0, 200.0), (200.0, 400.0), (400.0, 200.0), (400.0, 400.0), (200.0, 300.0), (300.0, 300.0)),
}
DEFAULT_NUM_NODES = 3

# 容差
GEOM_TOL = 1e-6     # m
ENERGY_TOL = 1e-9   # J


class ScenarioError(ValueError):
    """配置解析失败或场景不变量不成立；field 指出出错字段"""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"[{field_name}] {message}")
        self.field = field_name


class PlanShapeError(ValueError):
    """Plan 维度与场景不符（区别于约束违反）"""


@dataclass(frozen=True)
class Violation:
    constraint: str
    indices: Tuple[int, ...]
    magnitude: float

    def __str__(self):
        return f"{self.constraint}{list(self.indices)}: {self.magnitude:.3g}"


def _as_points(value, name: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ScenarioError(name, f"无法解析坐标: {e}")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioError(name, f"需要 n × 2 坐标数组，实际形状 {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(name, "坐标必须有限")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    node_positions: np.ndarray
    uav_initials: np.ndarray
    altitude: float = ALTITUDE
    horizon_seconds: float = HORIZON_SECONDS
    num_slots: int = NUM_SLOTS
    v_max: float = V_MAX
    d_min: float = D_MIN
    bandwidth: float = BANDWIDTH
    carrier_hz: float = CARRIER_HZ
    light_speed: float = LIGHT_SPEED
    noise_power: float = float(dbm_to_watts(NOISE_POWER_DBM))
    battery_capacity: float = BATTERY_CAPACITY
    channel: ChannelParams = field(default_factory=ChannelParams)
    area_size: float = AREA_SIZE
    panel_area: float = PANEL_AREA
    panel_efficiency: float = PANEL_EFFICIENCY
    battery_spill: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'node_positions', _as_points(self.node_positions, 'node_positions'))
        object.__setattr__(self, 'uav_initials', _as_points(self.uav_initials, 'uav_initials'))
        if len(self.node_positions) < 1:
            raise ScenarioError('node_positions', "至少需要一个节点 (K ≥ 1)")
        if len(self.uav_initials) < 1:
            raise ScenarioError('uav_initials', "至少需要一架 UAV (M ≥ 1)")
        if isinstance(self.num_slots, bool) or int(self.num_slots) != self.num_slots or self.num_slots < 1:
            raise ScenarioError('num_slots', f"时隙数必须为正整数: {self.num_slots}")
        object.__setattr__(self, 'num_slots', int(self.num_slots))
        for name in ('altitude', 'horizon_seconds', 'v_max', 'd_min', 'bandwidth', 'carrier_hz',
                     'light_speed', 'noise_power', 'battery_capacity', 'area_size', 'panel_area'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ScenarioError(name, f"必须为有限正数: {value}")
        if not 0 < self.panel_efficiency <= 1:
            raise ScenarioError('panel_efficiency', f"效率需在 (0, 1]: {self.panel_efficiency}")
        ini = self.uav_initials
        for m in range(len(ini)):
            for j in range(m + 1, len(ini)):
                if np.allclose(ini[m], ini[j], rtol=0.0, atol=1e-9):
                    raise ScenarioError('uav_initials', f"UAV {m} 与 UAV {j} 起点重复: {ini[m].tolist()}")
        if len(ini) > 1 and not self.d_min < math.sqrt(2.0) * self.area_size:
            raise ScenarioError('d_min', f"d_min={self.d_min} 不小于区域对角线")

    # ----- 派生量 -----
    @property
    def slot_seconds(self) -> float:
        return self.horizon_seconds / self.num_slots

    @property
    def num_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def num_uavs(self) -> int:
        return len(self.uav_initials)

    @property
    def noise_dbm(self) -> float:
        return float(watts_to_dbm(self.noise_power))

    @property
    def area_center(self) -> np.ndarray:
        return np.array([0.5 * self.area_size, 0.5 * self.area_size])

    def with_overrides(self, **changes) -> 'Scenario':
        return replace(self, **changes)

    def to_document(self) -> dict:
        """与 load_scenario 对称的 JSON 文档"""
        return {
            'node_positions': self.node_positions.tolist(),
            'uav_initials': self.uav_initials.tolist(),
            'altitude': self.altitude,
            'horizon_seconds': self.horizon_seconds,
            'num_slots': self.num_slots,
            'v_max': self.v_max,
            'd_min': self.d_min,
            'bandwidth': self.bandwidth,
            'carrier_hz': self.carrier_hz,
            'light_speed': self.light_speed,
            'noise_power_dbm': self.noise_dbm,
            'battery_capacity': self.battery_capacity,
            'area_size': self.area_size,
            'panel_area': self.panel_area,
            'panel_efficiency': self.panel_efficiency,
            'battery_spill': self.battery_spill,
            'channel': {
                'a_coef': self.channel.a_coef,
                'b_coef': self.channel.b_coef,
                'eta_los_db': self.channel.eta_los,
                'eta_nlos_db': self.channel.eta_nlos,
                'shadowing_db': self.channel.shadowing_db,
                'fading_seed': self.channel.seed,
            },
        }


@dataclass(frozen=True, eq=False)
class Plan:
    """waypoints: M × (N+1) × 2；association: M × K × N (0/1)；power: K × N (W)"""
    waypoints: np.ndarray
    association: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        q = np.array(self.waypoints, dtype=float)
        a = np.array(self.association)
        if a.dtype == bool:
            a = a.astype(np.int8)
        p = np.array(self.power, dtype=float)
        if q.ndim != 3 or q.shape[2] != 2:
            raise PlanShapeError(f"waypoints 需为 M × (N+1) × 2，实际 {q.shape}")
        if a.ndim != 3:
            raise PlanShapeError(f"association 需为 M × K × N，实际 {a.shape}")
        if p.ndim != 2:
            raise PlanShapeError(f"power 需为 K × N，实际 {p.shape}")
        for arr in (q, a, p):
            arr.setflags(write=False)
        object.__setattr__(self, 'waypoints', q)
        object.__setattr__(self, 'association', a)
        object.__setattr__(self, 'power', p)

    @property
    def num_uavs(self) -> int:
        return self.waypoints.shape[0]

    @property
    def num_slots(self) -> int:
        return self.power.shape[1]

    def hovering(self, tol: float = GEOM_TOL) -> np.ndarray:
        """M × N 布尔表：时隙 n 内 UAV 是否悬停"""
        step = np.linalg.norm(np.diff(self.waypoints, axis=1), axis=-1)
        return step <= tol

    def replace(self, **changes) -> 'Plan':
        return replace(self, **changes)


def plan_from_arrays(scenario: Scenario, waypoints, association, power) -> Plan:
    """构造并检查维度的 Plan"""
    plan = Plan(waypoints=waypoints, association=association, power=power)
    check_plan_shape(scenario, plan)
    return plan


def check_plan_shape(scenario: Scenario, plan: Plan):
    M, K, N = scenario.num_uavs, scenario.num_nodes, scenario.num_slots
    expected = {
        'waypoints': (M, N + 1, 2),
        'association': (M, K, N),
        'power': (K, N),
    }
    for name, shape in expected.items():
        actual = getattr(plan, name).shape
        if actual != shape:
            raise PlanShapeError(f"{name} 维度 {actual} 与场景要求 {shape} 不符")


def stationary_plan(scenario: Scenario) -> Plan:
    """UAV 停在起点、零关联、零功率"""
    M, K, N = scenario.num_uavs, scenario.num_nodes, scenario.num_slots
    q = np.repeat(scenario.uav_initials[:, None, :], N + 1, axis=1)
    return Plan(waypoints=q, association=np.zeros((M, K, N), dtype=np.int8), power=np.zeros((K, N)))


# -----------------------
# 约束审计
# -----------------------
def validate_plan(scenario: Scenario, plan: Plan, tol: float = GEOM_TOL, profile=None,
                  energy_tol: float = ENERGY_TOL) -> List[Violation]:
    """返回全部约束违反记录；空列表表示可行。给定 profile 时一并检查能量约束。"""
    check_plan_shape(scenario, plan)
    violations: List[Violation] = []
    q = plan.waypoints
    a = plan.association
    P = plan.power
    M, N = scenario.num_uavs, scenario.num_slots
    delta = scenario.slot_seconds

    # 端点
    for m in range(M):
        for n in (0, N):
            gap = float(np.linalg.norm(q[m, n] - scenario.uav_initials[m]))
            if gap > tol:
                violations.append(Violation('endpoint', (m, n), gap))

    # 速度
    step = np.linalg.norm(np.diff(q, axis=1), axis=-1)
    excess = step - scenario.v_max * delta
    for m, n in zip(*np.nonzero(excess > tol)):
        violations.append(Violation('speed', (int(m), int(n)), float(excess[m, n])))

    # 防撞（1 ≤ n ≤ N-1）
    for m in range(M):
        for j in range(m + 1, M):
            dist = np.linalg.norm(q[m, 1:N] - q[j, 1:N], axis=-1)
            short = scenario.d_min - dist
            for idx in np.nonzero(short > tol)[0]:
                violations.append(Violation('separation', (m, j, int(idx) + 1), float(short[idx])))

    # 关联
    non_binary = (a != 0) & (a != 1)
    for m, k, n in zip(*np.nonzero(non_binary)):
        violations.append(Violation('association-binary', (int(m), int(k), int(n)), float(a[m, k, n])))
    ab = (a == 1).astype(int)
    rows = ab.sum(axis=1)
    for m, n in zip(*np.nonzero(rows > 1)):
        violations.append(Violation('association-uav', (int(m), int(n)), float(rows[m, n] - 1)))
    cols = ab.sum(axis=0)
    for k, n in zip(*np.nonzero(cols > 1)):
        violations.append(Violation('association-node', (int(k), int(n)), float(cols[k, n] - 1)))

    # 服务时悬停
    serving = rows > 0
    moving = step > tol
    for m, n in zip(*np.nonzero(serving & moving)):
        violations.append(Violation('hover', (int(m), int(n)), float(step[m, n])))

    # 功率
    for k, n in zip(*np.nonzero(P < -energy_tol / delta)):
        violations.append(Violation('power-negative', (int(k), int(n)), float(-P[k, n])))
    idle = (cols == 0) & (P * delta > energy_tol)
    for k, n in zip(*np.nonzero(idle)):
        violations.append(Violation('power-unassociated', (int(k), int(n)), float(P[k, n])))

    if profile is not None:
        from energy import check_energy_feasible
        violations.extend(check_energy_feasible(P, profile, scenario, tol=energy_tol))
    return violations


# -----------------------
# 配置读写
# -----------------------
_TOP_KEYS = {
    'node_positions', 'uav_initials', 'num_nodes', 'altitude', 'horizon_seconds', 'num_slots',
    'v_max', 'd_min', 'bandwidth', 'carrier_hz', 'light_speed', 'noise_power_dbm',
    'battery_capacity', 'area_size', 'panel_area', 'panel_efficiency', 'battery_spill', 'channel',
}
_CHANNEL_KEYS = {'a_coef', 'b_coef', 'eta_los_db', 'eta_nlos_db', 'shadowing_db', 'fading_seed'}


def default_layout(num_nodes: int) -> Tuple[Tuple[float, float], ...]:
    if num_nodes not in NODE_LAYOUTS:
        raise ScenarioError('num_nodes', f"无内置布局 K={num_nodes}，请给出 node_positions")
    return NODE_LAYOUTS[num_nodes]


def default_scenario(num_nodes: Optional[int] = None, **overrides) -> Scenario:
    """默认场景；num_nodes 选择内置节点布局，其余字段可直接覆盖"""
    if 'node_positions' not in overrides:
        overrides['node_positions'] = default_layout(num_nodes or DEFAULT_NUM_NODES)
    overrides.setdefault('uav_initials', UAV_INITIALS)
    return Scenario(**overrides)


def _read_document(source) -> dict:
    if source is None:
        return {}
    if isinstance(source, Mapping):
        return dict(source)
    text = str(source)
    if not text.strip():
        return {}
    if not text.lstrip().startswith('{') and os.path.exists(text):
        with open(text, 'r', encoding='utf-8') as f:
            text = f.read()
        if not text.strip():
            return {}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError('<document>', f"JSON 解析失败: {e}")
    if not isinstance(doc, dict):
        raise ScenarioError('<document>', "场景文档必须是 JSON 对象")
    return doc


def load_scenario(source: Union[str, Mapping, None] = None) -> Scenario:
    """从路径、内联 JSON 文本或字典加载场景；空文档返回默认场景"""
    doc = _read_document(source)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "未知配置项")

    kwargs = {}
    for key in ('altitude', 'horizon_seconds', 'v_max', 'd_min', 'bandwidth', 'carrier_hz',
                'light_speed', 'battery_capacity', 'area_size', 'panel_area', 'panel_efficiency'):
        if key in doc:
            kwargs[key] = _number(doc[key], key)
    if 'num_slots' in doc:
        value = doc['num_slots']
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ScenarioError('num_slots', f"必须为整数: {value!r}")
        kwargs['num_slots'] = int(value)
    if 'noise_power_dbm' in doc:
        kwargs['noise_power'] = float(dbm_to_watts(_number(doc['noise_power_dbm'], 'noise_power_dbm')))
    if 'battery_spill' in doc:
        if not isinstance(doc['battery_spill'], bool):
            raise ScenarioError('battery_spill', "必须为 true/false")
        kwargs['battery_spill'] = doc['battery_spill']

    if 'node_positions' in doc:
        kwargs['node_positions'] = doc['node_positions']
        if 'num_nodes' in doc and len(doc['node_positions']) != doc['num_nodes']:
            raise ScenarioError('num_nodes', "与 node_positions 数量不一致")
    else:
        kwargs['node_positions'] = default_layout(int(doc.get('num_nodes', DEFAULT_NUM_NODES)))
    kwargs['uav_initials'] = doc.get('uav_initials', UAV_INITIALS)

    ch = doc.get('channel', {})
    if not isinstance(ch, dict):
        raise ScenarioError('channel', "必须是 JSON 对象")
    bad = set(ch) - _CHANNEL_KEYS
    if bad:
        raise ScenarioError(f"channel.{sorted(bad)[0]}", "未知配置项")
    try:
        kwargs['channel'] = ChannelParams(
            a_coef=_number(ch.get('a_coef', ChannelParams.a_coef), 'channel.a_coef'),
            b_coef=_number(ch.get('b_coef', ChannelParams.b_coef), 'channel.b_coef'),
            eta_los=_number(ch.get('eta_los_db', ChannelParams.eta_los), 'channel.eta_los_db'),
            eta_nlos=_number(ch.get('eta_nlos_db', ChannelParams.eta_nlos), 'channel.eta_nlos_db'),
            shadowing_db=_number(ch.get('shadowing_db', ChannelParams.shadowing_db), 'channel.shadowing_db'),
            seed=ch.get('fading_seed'),
        )
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError('channel', str(e))
    return Scenario(**kwargs)


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(name, f"必须为数值: {value!r}")
    return float(value)


def save_scenario(scenario: Scenario, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(scenario.to_document(), f, indent=2)


# -----------------------
# Plan CSV
# -----------------------
WAYPOINT_CSV = 'waypoints.csv'
ASSOCIATION_CSV = 'association.csv'
POWER_CSV = 'power.csv'


def save_plan(plan: Plan, directory: str):
    """写出三张表：uav,slot,x,y / slot,uav,node / node,slot,power_w"""
    os.makedirs(directory, exist_ok=True)
    M, N1, _ = plan.waypoints.shape
    uav, slot = np.meshgrid(np.arange(M), np.arange(N1), indexing='ij')
    pd.DataFrame({
        'uav': uav.ravel(), 'slot': slot.ravel(),
        'x': plan.waypoints[:, :, 0].ravel(), 'y': plan.waypoints[:, :, 1].ravel(),
    }).to_csv(os.path.join(directory, WAYPOINT_CSV), index=False)

    m_idx, k_idx, n_idx = np.nonzero(plan.association == 1)
    order = np.lexsort((m_idx, n_idx))
    pd.DataFrame({
        'slot': n_idx[order], 'uav': m_idx[order], 'node': k_idx[order],
    }).to_csv(os.path.join(directory, ASSOCIATION_CSV), index=False)

    K, N = plan.power.shape
    node, slot = np.meshgrid(np.arange(K), np.arange(N), indexing='ij')
    pd.DataFrame({
        'node': node.ravel(), 'slot': slot.ravel(), 'power_w': plan.power.ravel(),
    }).to_csv(os.path.join(directory, POWER_CSV), index=False)


def load_plan(directory: str, scenario: Scenario) -> Plan:
    M, K, N = scenario.num_uavs, scenario.num_nodes, scenario.num_slots
    wp = pd.read_csv(os.path.join(directory, WAYPOINT_CSV))
    q = np.zeros((M, N + 1, 2))
    try:
        q[wp['uav'].to_numpy(), wp['slot'].to_numpy(), 0] = wp['x'].to_numpy()
        q[wp['uav'].to_numpy(), wp['slot'].to_numpy(), 1] = wp['y'].to_numpy()
    except IndexError as e:
        raise PlanShapeError(f"航点表与场景维度不符: {e}")
    if len(wp) != M * (N + 1):
        raise PlanShapeError(f"航点表行数 {len(wp)} ≠ {M * (N + 1)}")

    assoc = pd.read_csv(os.path.join(directory, ASSOCIATION_CSV))
    a = np.zeros((M, K, N), dtype=np.int8)
    if len(assoc):
        try:
            a[assoc['uav'].to_numpy(), assoc['node'].to_numpy(), assoc['slot'].to_numpy()] = 1
        except IndexError as e:
            raise PlanShapeError(f"关联表与场景维度不符: {e}")

    pw = pd.read_csv(os.path.join(directory, POWER_CSV))
    p = np.zeros((K, N))
    try:
        p[pw['node'].to_numpy(), pw['slot'].to_numpy()] = pw['power_w'].to_numpy()
    except IndexError as e:
        raise PlanShapeError(f"功率表与场景维度不符: {e}")
    return plan_from_arrays(scenario, q, a, p)

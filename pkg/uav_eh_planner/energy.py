#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
太阳能采集 (EH) 与节点电池账本

记号：E_k[n] 为时隙 n 开始时到达的采集能量 (n = 0..N-1，约定 E_k[N] = 0)；
B_k[0] = E_k[0]；时隙 n 消耗 δ·P_k[n] 后再收到 E_k[n+1]：
    B_k[n+1] = B_k[n] − δ·P_k[n] + E_k[n+1]

两种容量策略（Scenario.battery_spill）：
- spill=False（默认）：因果性与容量两条前缀约束逐字检查，账本不做截断
- spill=True（可选）：电池满时多余能量溢出 (spilled)，容量靠饱和保证，只需检查 δP ≤ B
"""

import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from scenario import Scenario, Violation, PlanShapeError, ENERGY_TOL

PROFILE_KINDS = ('constant', 'ramp', 'bell', 'morning', 'afternoon')
HARVEST_REL_STD = 0.1


class EnergyInfeasibleError(ValueError):
    """功率计划违反能量约束；violation 为第一条违反记录"""

    def __init__(self, violation: Violation):
        super().__init__(f"能量约束不可行: {violation}")
        self.violation = violation


class IrradianceDataError(ValueError):
    """辐照度 CSV 为空、含负值或覆盖不全"""


@dataclass(frozen=True, eq=False)
class HarvestProfile:
    energy_per_slot: np.ndarray     # K × N, J
    label: str = 'synthetic'

    def __post_init__(self):
        e = np.array(self.energy_per_slot, dtype=float)
        if e.ndim == 1:
            e = e[None, :]
        if e.ndim != 2:
            raise ValueError(f"采集能量需为 K × N 数组，实际 {e.shape}")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("采集能量必须非负且有限")
        e.setflags(write=False)
        object.__setattr__(self, 'energy_per_slot', e)

    @property
    def num_nodes(self) -> int:
        return self.energy_per_slot.shape[0]

    @property
    def num_slots(self) -> int:
        return self.energy_per_slot.shape[1]

    def extended(self) -> np.ndarray:
        """K × (N+1)，末列 E[N] = 0"""
        return np.concatenate([self.energy_per_slot, np.zeros((self.num_nodes, 1))], axis=1)

    def for_nodes(self, num_nodes: int) -> 'HarvestProfile':
        """单行剖面广播到 K 个节点"""
        if self.num_nodes == num_nodes:
            return self
        if self.num_nodes != 1:
            raise PlanShapeError(f"剖面节点数 {self.num_nodes} 与 K={num_nodes} 不符")
        return HarvestProfile(np.repeat(self.energy_per_slot, num_nodes, axis=0), self.label)


@dataclass(frozen=True, eq=False)
class BatteryLedger:
    battery: np.ndarray     # K × (N+1)
    spend: np.ndarray       # K × N
    spilled: np.ndarray = field(default=None)   # K × (N+1)

    @property
    def final(self) -> np.ndarray:
        return self.battery[:, -1]


def _check_shapes(power: np.ndarray, profile: HarvestProfile, scenario: Scenario) -> np.ndarray:
    P = np.asarray(power, dtype=float)
    shape = (scenario.num_nodes, scenario.num_slots)
    if P.shape != shape:
        raise PlanShapeError(f"功率维度 {P.shape} 与场景 {shape} 不符")
    if profile.energy_per_slot.shape != shape:
        raise PlanShapeError(f"采集剖面维度 {profile.energy_per_slot.shape} 与场景 {shape} 不符")
    return P


# -----------------------
# 账本
# -----------------------
def spill_ledger(spend: np.ndarray, harvest_ext: np.ndarray, capacity: float):
    """饱和电池递推，返回 (battery K×(N+1), spilled K×(N+1))；不检查因果性"""
    spend = np.asarray(spend, dtype=float)
    K, N = spend.shape
    battery = np.zeros((K, N + 1))
    spilled = np.zeros((K, N + 1))
    level = harvest_ext[:, 0]
    battery[:, 0] = np.minimum(level, capacity)
    spilled[:, 0] = level - battery[:, 0]
    for n in range(N):
        level = battery[:, n] - spend[:, n] + harvest_ext[:, n + 1]
        battery[:, n + 1] = np.minimum(level, capacity)
        spilled[:, n + 1] = level - battery[:, n + 1]
    return battery, spilled


def prefix_ledger(spend: np.ndarray, harvest_ext: np.ndarray) -> np.ndarray:
    """无截断的前缀和账本 B[n] = Σ_{l≤n} E[l] − Σ_{l<n} δP[l]"""
    K, N = spend.shape
    spent = np.concatenate([np.zeros((K, 1)), np.cumsum(spend, axis=1)], axis=1)
    return np.cumsum(harvest_ext, axis=1) - spent


def causality_slack(power, profile: HarvestProfile, scenario: Scenario) -> np.ndarray:
    """每个时隙发射后剩余电量 B[n] − δP[n] (K × N)，负值即违反因果性"""
    P = _check_shapes(power, profile, scenario)
    spend = P * scenario.slot_seconds
    ext = profile.extended()
    if scenario.battery_spill:
        battery, _ = spill_ledger(spend, ext, scenario.battery_capacity)
    else:
        battery = prefix_ledger(spend, ext)
    return battery[:, :-1] - spend


def check_energy_feasible(power, profile: HarvestProfile, scenario: Scenario,
                          tol: float = ENERGY_TOL) -> List[Violation]:
    """因果性 δΣP ≤ ΣE 与容量 ΣE(含下一时隙到达) − δΣP ≤ B_max 的逐项审计"""
    P = _check_shapes(power, profile, scenario)
    spend = P * scenario.slot_seconds
    ext = profile.extended()
    violations: List[Violation] = []
    if scenario.battery_spill:
        battery, _ = spill_ledger(spend, ext, scenario.battery_capacity)
        short = spend - battery[:, :-1]
        for k, n in zip(*np.nonzero(short > tol)):
            violations.append(Violation('energy-causality', (int(k), int(n)), float(short[k, n])))
        return violations

    harvested = np.cumsum(ext, axis=1)
    spent = np.cumsum(spend, axis=1)
    short = spent - harvested[:, :-1]
    for k, n in zip(*np.nonzero(short > tol)):
        violations.append(Violation('energy-causality', (int(k), int(n)), float(short[k, n])))
    level = prefix_ledger(spend, ext)
    over = level - scenario.battery_capacity
    for k, n in zip(*np.nonzero(over > tol)):
        violations.append(Violation('battery-capacity', (int(k), int(n)), float(over[k, n])))
    violations.sort(key=lambda v: (v.indices[1], v.indices[0], v.constraint))
    return violations


def evolve_battery(power, profile: HarvestProfile, scenario: Scenario,
                   tol: float = ENERGY_TOL) -> BatteryLedger:
    """电池演化；输入不可行时抛出 EnergyInfeasibleError（携带第一条违反）"""
    violations = check_energy_feasible(power, profile, scenario, tol=tol)
    if violations:
        raise EnergyInfeasibleError(violations[0])
    P = np.asarray(power, dtype=float)
    spend = P * scenario.slot_seconds
    ext = profile.extended()
    if scenario.battery_spill:
        battery, spilled = spill_ledger(spend, ext, scenario.battery_capacity)
    else:
        battery = prefix_ledger(spend, ext)
        spilled = np.zeros_like(battery)
    for arr in (battery, spend, spilled):
        arr.setflags(write=False)
    return BatteryLedger(battery=battery, spend=spend, spilled=spilled)


def sustainable_power(profile: HarvestProfile, scenario: Scenario) -> np.ndarray:
    """Ē_k[n] / δ：单时隙采集量全部用掉时的功率"""
    return profile.energy_per_slot / scenario.slot_seconds


# -----------------------
# 采集剖面
# -----------------------
def _slot_energy(irradiance: np.ndarray, scenario: Scenario) -> np.ndarray:
    return irradiance * scenario.panel_area * scenario.panel_efficiency * scenario.slot_seconds


def synth_profile(kind: str, peak: float, scenario: Scenario, label: Optional[str] = None) -> HarvestProfile:
    """闭式辐照度 (W/m²) → 每时隙能量；所有节点共享同一条曲线"""
    if kind not in PROFILE_KINDS:
        raise ValueError(f"未知剖面类型 '{kind}'，可选 {PROFILE_KINDS}")
    if peak < 0:
        raise ValueError(f"峰值辐照度不能为负: {peak}")
    N = scenario.num_slots
    n = np.arange(N, dtype=float)
    if kind == 'constant':
        irr = np.full(N, float(peak))
    elif kind == 'ramp':
        irr = peak * (n + 1.0) / N
    elif kind == 'bell':
        center = 0.5 * (N - 1)
        width = max(N / 6.0, 1.0)
        irr = peak * np.exp(-0.5 * ((n - center) / width) ** 2)
    elif kind == 'morning':
        width = max(N / 3.0, 1.0)
        irr = peak * np.exp(-0.5 * ((n - (N - 1)) / width) ** 2)
    else:
        width = max(N / 3.0, 1.0)
        irr = peak * np.exp(-0.5 * (n / width) ** 2)
    energy = np.repeat(_slot_energy(irr, scenario)[None, :], scenario.num_nodes, axis=0)
    return HarvestProfile(energy, label or kind)


def sample_harvest(profile: HarvestProfile, rel_std: float, rng: np.random.Generator) -> HarvestProfile:
    """乘性扰动 Ē·max(0, 1 + σ_r·z)，z ~ N(0,1) 独立于 (k, n)"""
    if rel_std < 0:
        raise ValueError(f"rel_std 不能为负: {rel_std}")
    factor = np.clip(1.0 + rel_std * rng.standard_normal(profile.energy_per_slot.shape), 0.0, None)
    return HarvestProfile(profile.energy_per_slot * factor, f"{profile.label}-sample")


def _timestamps_to_seconds(col: pd.Series) -> np.ndarray:
    numeric = pd.to_numeric(col, errors='coerce')
    if numeric.notna().all():
        sec = numeric.to_numpy(dtype=float)
    else:
        try:
            ts = pd.to_datetime(col, format='ISO8601')
        except (ValueError, TypeError) as e:
            raise IrradianceDataError(f"时间戳无法解析: {e}")
        sec = (ts - ts.min()).dt.total_seconds().to_numpy()
    return sec - sec.min()


def load_irradiance_csv(path: str, panel_area: float, efficiency: float, slot_seconds: float,
                        num_slots: Optional[int] = None, num_nodes: int = 1,
                        label: Optional[str] = None) -> HarvestProfile:
    """读取 `timestamp,irradiance_wm2` 表（可选 `node` 列），按时隙取均值

    E_k[n] = 辐照度均值 × 面积 × 效率 × δ。缺失时隙或负辐照度抛出 IrradianceDataError。
    """
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise IrradianceDataError(f"空文件: {path}")
    if df.empty:
        raise IrradianceDataError(f"空文件: {path}")
    missing_cols = {'timestamp', 'irradiance_wm2'} - set(df.columns)
    if missing_cols:
        raise IrradianceDataError(f"缺少列: {sorted(missing_cols)}")
    irr = pd.to_numeric(df['irradiance_wm2'], errors='coerce')
    if irr.isna().any():
        raise IrradianceDataError("irradiance_wm2 含非数值")
    if (irr < 0).any():
        bad = df.loc[irr < 0, 'timestamp'].tolist()[:5]
        raise IrradianceDataError(f"负辐照度出现在 {bad}")

    if 'node' in df.columns:
        groups = [(int(k), g) for k, g in df.groupby('node', sort=True)]
    else:
        groups = [(0, df)]

    rows = []
    for node, g in groups:
        sec = _timestamps_to_seconds(g['timestamp'].reset_index(drop=True))
        slot = np.floor(sec / slot_seconds + 1e-9).astype(int)
        values = pd.to_numeric(g['irradiance_wm2']).to_numpy(dtype=float)
        n_slots = num_slots if num_slots is not None else int(slot.max()) + 1
        keep = (slot >= 0) & (slot < n_slots)
        means = pd.Series(values[keep]).groupby(slot[keep]).mean()
        gaps = sorted(set(range(n_slots)) - set(means.index.tolist()))
        if gaps:
            raise IrradianceDataError(
                f"节点 {node} 缺失时隙: " + ", ".join(
                    f"[{n * slot_seconds:.0f}s, {(n + 1) * slot_seconds:.0f}s)" for n in gaps[:10]))
        rows.append(means.sort_index().to_numpy() * panel_area * efficiency * slot_seconds)

    energy = np.vstack(rows)
    if energy.shape[0] == 1 and num_nodes > 1:
        energy = np.repeat(energy, num_nodes, axis=0)
    return HarvestProfile(energy, label or os.path.splitext(os.path.basename(path))[0])


def load_profile(source: str, scenario: Scenario) -> HarvestProfile:
    """'synthetic:<kind>:<peak>' 或 CSV 路径"""
    if source.startswith('synthetic:'):
        parts = source.split(':')
        if len(parts) != 3:
            raise ValueError(f"合成剖面格式应为 synthetic:<kind>:<peak>，实际 '{source}'")
        return synth_profile(parts[1], float(parts[2]), scenario)
    return load_irradiance_csv(source, scenario.panel_area, scenario.panel_efficiency,
                               scenario.slot_seconds, scenario.num_slots, scenario.num_nodes)


def save_profile_csv(profile: HarvestProfile, path: str, panel_area: float, efficiency: float,
                     slot_seconds: float):
    """导出为与输入相同的表结构（时隙起点秒数 + 折算辐照度）"""
    irr = profile.energy_per_slot / (panel_area * efficiency * slot_seconds)
    K, N = irr.shape
    stamps = (np.arange(N) * slot_seconds).astype(int)
    if K == 1 or np.all(irr == irr[0]):
        df = pd.DataFrame({'timestamp': stamps, 'irradiance_wm2': irr[0]})
    else:
        df = pd.DataFrame({
            'timestamp': np.tile(stamps, K),
            'irradiance_wm2': irr.ravel(),
            'node': np.repeat(np.arange(K), N),
        })
    df.to_csv(path, index=False)

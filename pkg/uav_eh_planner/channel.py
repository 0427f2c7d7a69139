#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
空对地 (A2G) 信道模型：LOS/NLOS 概率混合 + Rayleigh 小尺度衰落

提供三类功能：
1. 确定性几何量：三维距离、仰角、LOS 概率、路径损耗 (dB)
2. 平均信道增益 H̄ = C1·C2/(X·Y) + C3/X （离线优化使用）
3. 瞬时信道实现：每个 (UAV, 节点, 时隙) 一次 LOS/NLOS 抽样，乘以 Exp(1) 功率衰落

所有内部量均为 SI 线性单位，dB 只在边界处出现。
本模块不依赖 scenario（避免循环导入），场景对象按属性访问即可。
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

# 城区环境默认参数
DEFAULT_A_COEF = 9.61
DEFAULT_B_COEF = 0.1592
DEFAULT_ETA_LOS_DB = 1.0
DEFAULT_ETA_NLOS_DB = 20.0
DEFAULT_SHADOWING_DB = 0.0

RAD2DEG = 180.0 / math.pi


@dataclass(frozen=True)
class ChannelParams:
    """路径损耗与 LOS 概率的环境参数；seed 仅用于小尺度衰落的默认随机流"""
    a_coef: float = DEFAULT_A_COEF
    b_coef: float = DEFAULT_B_COEF
    eta_los: float = DEFAULT_ETA_LOS_DB
    eta_nlos: float = DEFAULT_ETA_NLOS_DB
    shadowing_db: float = DEFAULT_SHADOWING_DB
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.a_coef > 0:
            raise ValueError(f"a_coef 必须为正: {self.a_coef}")
        if not self.b_coef > 0:
            raise ValueError(f"b_coef 必须为正: {self.b_coef}")
        if not (self.eta_nlos > self.eta_los >= 0):
            raise ValueError(f"需要 eta_nlos > eta_los >= 0, 实际 {self.eta_nlos}, {self.eta_los}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """瞬时信道：gains / los_flags 形状均为 M × K × N"""
    gains: np.ndarray
    los_flags: np.ndarray

    def __post_init__(self):
        gains = np.array(self.gains, dtype=float)
        flags = np.array(self.los_flags, dtype=bool)
        if gains.shape != flags.shape or gains.ndim != 3:
            raise ValueError(f"信道实现维度错误: gains {gains.shape}, los {flags.shape}")
        if not np.all(np.isfinite(gains)) or np.any(gains <= 0):
            raise ValueError("信道增益必须为正且有限")
        gains.setflags(write=False)
        flags.setflags(write=False)
        object.__setattr__(self, 'gains', gains)
        object.__setattr__(self, 'los_flags', flags)


@dataclass(frozen=True, eq=False)
class FadingDraw:
    """与位置无关的随机数：LOS 判决用的均匀数 + |χ|² 指数衰落功率 (M × K × N)

    同一个 FadingDraw 可在任意 UAV 位置上实现信道，便于在共同随机数下比较策略。
    """
    los_uniform: np.ndarray
    fading_power: np.ndarray

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.los_uniform.shape


# -----------------------
# 单位换算
# -----------------------
def db_to_linear(value_db):
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watts(value_dbm):
    return np.power(10.0, (np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(value_w):
    return 10.0 * np.log10(np.asarray(value_w, dtype=float)) + 30.0


# -----------------------
# 几何量
# -----------------------
def distance(uav_xy, node_xy, altitude: float):
    """UAV 与节点的三维距离，支持广播"""
    if not altitude > 0:
        raise ValueError(f"飞行高度必须为正: {altitude}")
    diff = np.asarray(uav_xy, dtype=float) - np.asarray(node_xy, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1) + altitude * altitude)


def elevation_deg(horizontal_dist, altitude: float):
    """仰角（度）；水平距离为 0 时取 90°"""
    return RAD2DEG * np.arctan2(altitude, np.asarray(horizontal_dist, dtype=float))


def los_probability(horizontal_dist, altitude: float, params: ChannelParams):
    """ρ_LOS = 1 / (1 + A·exp(−B(θ − A)))"""
    if not altitude > 0:
        raise ValueError(f"飞行高度必须为正: {altitude}")
    r = np.asarray(horizontal_dist, dtype=float)
    if np.any(r < 0):
        raise ValueError("水平距离不能为负")
    theta = elevation_deg(r, altitude)
    return 1.0 / (1.0 + params.a_coef * np.exp(-params.b_coef * (theta - params.a_coef)))


def free_space_factor(carrier_hz: float, light_speed: float) -> float:
    """(c / (4π f_c))²"""
    return (light_speed / (4.0 * math.pi * carrier_hz)) ** 2


def path_loss_db(dist, params: ChannelParams, is_los, carrier_hz: float = 2.4e9,
                 light_speed: float = 3e8):
    """L = 20·log10(4π f_c d / c) + η_ε + S"""
    d = np.asarray(dist, dtype=float)
    if np.any(d <= 0):
        raise ValueError("距离必须为正")
    eta = np.where(np.asarray(is_los, dtype=bool), params.eta_los, params.eta_nlos)
    return 20.0 * np.log10(4.0 * math.pi * carrier_hz * d / light_speed) + eta + params.shadowing_db


def gain_constants(scenario, params: Optional[ChannelParams] = None) -> Tuple[float, float, float]:
    """平均增益闭式中的 C1, C2, C3（均大于 0）"""
    params = params or scenario.channel
    base = free_space_factor(scenario.carrier_hz, scenario.light_speed) * 10.0 ** (-params.shadowing_db / 10.0)
    c1 = base
    c2 = 10.0 ** (-params.eta_los / 10.0) - 10.0 ** (-params.eta_nlos / 10.0)
    c3 = base * 10.0 ** (-params.eta_nlos / 10.0)
    return c1, c2, c3


def los_nlos_gains(dist, scenario, params: Optional[ChannelParams] = None):
    """大尺度增益 (Ľ_LOS, Ľ_NLOS)，线性值"""
    params = params or scenario.channel
    g_los = db_to_linear(-path_loss_db(dist, params, True, scenario.carrier_hz, scenario.light_speed))
    g_nlos = db_to_linear(-path_loss_db(dist, params, False, scenario.carrier_hz, scenario.light_speed))
    return g_los, g_nlos


def average_gain(uav_xy, node_xy, scenario, params: Optional[ChannelParams] = None):
    """平均增益 H̄ = C1·C2/(X·Y) + C3/X

    X = ‖q − g‖² + H²，Y = 1 + A·exp(−B(θ − A))。与 ρ_LOS·Ľ_LOS + ρ_NLOS·Ľ_NLOS 等价。
    """
    params = params or scenario.channel
    H = scenario.altitude
    diff = np.asarray(uav_xy, dtype=float) - np.asarray(node_xy, dtype=float)
    r2 = np.sum(diff * diff, axis=-1)
    x = r2 + H * H
    theta = elevation_deg(np.sqrt(r2), H)
    y = 1.0 + params.a_coef * np.exp(-params.b_coef * (theta - params.a_coef))
    c1, c2, c3 = gain_constants(scenario, params)
    return c1 * c2 / (x * y) + c3 / x


def average_gain_mixture(uav_xy, node_xy, scenario, params: Optional[ChannelParams] = None):
    """同一平均增益的混合形式 ρ_LOS·Ľ_LOS + (1 − ρ_LOS)·Ľ_NLOS"""
    params = params or scenario.channel
    H = scenario.altitude
    diff = np.asarray(uav_xy, dtype=float) - np.asarray(node_xy, dtype=float)
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    rho = los_probability(r, H, params)
    g_los, g_nlos = los_nlos_gains(np.sqrt(r * r + H * H), scenario, params)
    return rho * g_los + (1.0 - rho) * g_nlos


def _horizontal_distances(positions: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """positions: M × N × 2, nodes: K × 2 → M × K × N"""
    diff = positions[:, None, :, :] - nodes[None, :, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def average_gain_grid(waypoints, scenario, params: Optional[ChannelParams] = None) -> np.ndarray:
    """沿航迹的平均增益表 M × K × N（时隙 n 使用 q_m[n]）"""
    q = np.asarray(waypoints, dtype=float)
    N = scenario.num_slots
    pos = q[:, :N, :]
    nodes = np.asarray(scenario.node_positions, dtype=float)
    return average_gain(pos[:, None, :, :], nodes[None, :, None, :], scenario, params)


# -----------------------
# 随机信道
# -----------------------
def draw_fading(rng: np.random.Generator, num_uavs: int, num_nodes: int, num_slots: int) -> FadingDraw:
    shape = (num_uavs, num_nodes, num_slots)
    uniform = rng.random(shape)
    fading = rng.exponential(1.0, shape)
    return FadingDraw(los_uniform=uniform, fading_power=fading)


def realize_gains(draw: FadingDraw, positions, n: int, scenario,
                  params: Optional[ChannelParams] = None) -> Tuple[np.ndarray, np.ndarray]:
    """在给定 UAV 位置 (M × 2) 上实现时隙 n 的瞬时增益，返回 (gains M×K, los M×K)"""
    params = params or scenario.channel
    H = scenario.altitude
    pos = np.asarray(positions, dtype=float)
    nodes = np.asarray(scenario.node_positions, dtype=float)
    diff = pos[:, None, :] - nodes[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    rho = los_probability(r, H, params)
    los = draw.los_uniform[:, :, n] < rho
    g_los, g_nlos = los_nlos_gains(np.sqrt(r * r + H * H), scenario, params)
    gains = np.where(los, g_los, g_nlos) * draw.fading_power[:, :, n]
    return gains, los


def realization_along(draw: FadingDraw, waypoints, scenario,
                      params: Optional[ChannelParams] = None) -> ChannelRealization:
    """沿固定航迹在同一 FadingDraw 上实现信道（时隙 n 使用 q_m[n]）"""
    q = np.asarray(waypoints, dtype=float)
    N = scenario.num_slots
    gains = np.zeros(draw.shape)
    los = np.zeros(draw.shape, dtype=bool)
    for n in range(N):
        gains[:, :, n], los[:, :, n] = realize_gains(draw, q[:, n], n, scenario, params)
    return ChannelRealization(gains=gains, los_flags=los)


def sample_realization(waypoints, scenario, params: Optional[ChannelParams] = None,
                       rng: Optional[np.random.Generator] = None) -> ChannelRealization:
    """每个 (m,k,n) 一次 LOS/NLOS 抽样 × Exp(1) 小尺度功率"""
    params = params or scenario.channel
    if rng is None:
        rng = params.rng()
    q = np.asarray(waypoints, dtype=float)
    M, N = q.shape[0], scenario.num_slots
    K = len(scenario.node_positions)
    draw = draw_fading(rng, M, K, N)
    nodes = np.asarray(scenario.node_positions, dtype=float)
    H = scenario.altitude
    r = _horizontal_distances(q[:, :N, :], nodes)
    rho = los_probability(r, H, params)
    los = draw.los_uniform < rho
    g_los, g_nlos = los_nlos_gains(np.sqrt(r * r + H * H), scenario, params)
    gains = np.where(los, g_los, g_nlos) * draw.fading_power
    return ChannelRealization(gains=gains, los_flags=los)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
离线规划器：平均信道下的交替优化 (关联 LP → 航迹 SCA → 功率 SCA)

目标为最差节点累计速率 max-min。三个子问题：
- 关联：固定航迹与功率，松弛为 LP，0.5 取整后修复冲突
- 航迹：固定关联与功率，Ř₁ 用凹下界、Ř₂ 用辅助变量 (X̃, Ỹ, θ, Ũ) 凸化，逐次凸近似
- 功率：固定关联与航迹，干扰项一阶线性化，能量约束为仿射

内部单位：航迹子问题长度以 H 归一 (q' = q/H, X' = X/H², U' = U/H²)，
速率用 bits/s/Hz；所有接受判断都用真实目标 (bits/s·slot)。
服务时悬停的等式 q[n+1] = q[n] 通过“悬停段”消元：同一段航点共用一个变量，
含起点/终点的段固定在起点。
"""

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from baselines import circle_tour, heuristic_trajectory, nearest_association, exhaustive_power, relieve_capacity
from channel import ChannelParams, average_gain_grid, elevation_deg, gain_constants
from convex_solver import (BarrierSettings, ConvexProgram, LinearProgram, SmoothConstraint,
                           InfeasibleProblemError, SolverFailure, solve_convex_restriction)
from energy import HarvestProfile, causality_slack, spill_ledger, sustainable_power
from rate import LN2, evaluate_plan
from scenario import Scenario, Plan, Violation, GEOM_TOL, validate_plan, save_plan

# 外层 / 内层停止规则
OUTER_EPS = 1e-4
OUTER_MAX_ITERS = 20
INNER_TOL = 1e-3
INNER_MAX_ITERS = 30
MONOTONE_TOL = 1e-6

SUM_RATE_WEIGHT = 1e-4        # ζ + w·Σζ_k
DEGENERATE_OFFSET = 1e-3      # m，水平偏移小于该值视为正上方
ROUND_THRESHOLD = 0.5
X_FLOOR = 0.5                 # X̃/H² 下界
U_FLOOR_RATIO = 1e-2          # Ũ 下界 = 比例 × U_r
MOVING_FRACTION = 0.1         # 每轮最多新增悬停服务的飞行时隙比例
START_MARGIN = 1e-6

DEG = 180.0 / math.pi

SCA_SETTINGS = BarrierSettings(gap_tol=1e-8, kkt_tol=1e-5)


class InfeasibleLinearizationError(ValueError):
    """参考点违反防撞距离，线性化后的可行域可能为空"""

    def __init__(self, message: str, violation: Optional[Violation] = None):
        super().__init__(message)
        self.violation = violation


# -----------------------
# 参考点与单位
# -----------------------
@dataclass(frozen=True, eq=False)
class SurrogatePoint:
    """代理函数展开点；U_r/X_r/θ_r/Y_r 均为 M × K × N（时隙 n 取 q[n]）"""
    q_ref: np.ndarray
    p_ref: np.ndarray
    a_ref: np.ndarray
    U_r: np.ndarray
    X_r: np.ndarray
    theta_r: np.ndarray
    Y_r: np.ndarray

    @classmethod
    def at(cls, waypoints, powers, association, scenario: Scenario,
           params: Optional[ChannelParams] = None) -> 'SurrogatePoint':
        params = params or scenario.channel
        q = np.asarray(waypoints, dtype=float)
        N = scenario.num_slots
        H = scenario.altitude
        diff = q[:, None, :N, :] - scenario.node_positions[None, :, None, :]
        U = np.sum(diff * diff, axis=-1)
        theta = elevation_deg(np.sqrt(U), H)
        Y = 1.0 + params.a_coef * np.exp(-params.b_coef * (theta - params.a_coef))
        return cls(q_ref=q, p_ref=np.asarray(powers, dtype=float), a_ref=np.asarray(association),
                   U_r=U, X_r=U + H * H, theta_r=theta, Y_r=Y)

    @classmethod
    def from_plan(cls, plan: Plan, scenario: Scenario, params: Optional[ChannelParams] = None) -> 'SurrogatePoint':
        return cls.at(plan.waypoints, plan.power, plan.association, scenario, params)


@dataclass(frozen=True)
class _Units:
    altitude: float
    noise: float
    c12: float       # C1·C2/(H²σ²)
    c3: float        # C3/(H²σ²)
    a_coef: float
    b_coef: float

    @classmethod
    def of(cls, scenario: Scenario, params: Optional[ChannelParams] = None) -> '_Units':
        params = params or scenario.channel
        c1, c2, c3 = gain_constants(scenario, params)
        H = scenario.altitude
        norm = H * H * scenario.noise_power
        return cls(H, scenario.noise_power, c1 * c2 / norm, c3 / norm, params.a_coef, params.b_coef)

    @property
    def log2_noise(self) -> float:
        return math.log2(self.noise)


def _elevation_norm(u):
    """归一化 U' 下的仰角（度），U' = 0 时为 90°"""
    return DEG * np.arctan2(1.0, np.sqrt(np.maximum(u, 0.0)))


def exact_r1(waypoints, powers, scenario: Scenario, params: Optional[ChannelParams] = None) -> np.ndarray:
    """Ř₁m[n] = log2(Σ_i P_i·H̄_{m,i}[n] + σ²)，M × N"""
    gains = average_gain_grid(waypoints, scenario, params)
    received = np.einsum('mkn,kn->mn', gains, np.asarray(powers, dtype=float))
    return np.log2(received + scenario.noise_power)


def exact_r2(waypoints, powers, scenario: Scenario, params: Optional[ChannelParams] = None) -> np.ndarray:
    """Ř₂m,k[n] = −log2(Σ_{i≠k} P_i·H̄_{m,i}[n] + σ²)，M × K × N"""
    gains = average_gain_grid(waypoints, scenario, params)
    received = gains * np.asarray(powers, dtype=float)[None, :, :]
    interference = received.sum(axis=1, keepdims=True) - received
    return -np.log2(interference + scenario.noise_power)


# -----------------------
# Ř₁ 凹下界
# -----------------------
@dataclass(frozen=True, eq=False)
class R1Surrogate:
    """Ř₁ 的凹下界：常数 + Σ O·(X − X_r) + Σ G·(Y^up − Y_r)；表为 M × N × K，长度单位 H"""
    nodes: np.ndarray
    base: np.ndarray
    O: np.ndarray
    G: np.ndarray
    x_ref: np.ndarray
    y_ref: np.ndarray
    u_center: np.ndarray
    s_center: np.ndarray
    bk: np.ndarray
    scale: float
    log2_noise: float

    def normalized(self, q_norm: np.ndarray) -> np.ndarray:
        d = q_norm[:, :, None, :] - self.nodes[None, None, :, :]
        U = np.sum(d * d, axis=-1)
        with np.errstate(over='ignore', invalid='ignore'):
            y_up = 1.0 + self.s_center * np.exp(self.bk * (U - self.u_center))
            return (self.base + np.sum(self.O * (U + 1.0 - self.x_ref), axis=-1)
                    + np.sum(self.G * (y_up - self.y_ref), axis=-1))

    def evaluate(self, waypoints) -> np.ndarray:
        """真实单位 log2(W)，M × N"""
        q = np.asarray(waypoints, dtype=float)
        N = self.base.shape[1]
        return self.normalized(q[:, :N, :] / self.scale) + self.log2_noise

    def y_upper(self, waypoints) -> np.ndarray:
        """Y 的凸上界 Y^up(q)，M × N × K"""
        q = np.asarray(waypoints, dtype=float)
        N = self.base.shape[1]
        d = q[:, :N, None, :] / self.scale - self.nodes[None, None, :, :]
        U = np.sum(d * d, axis=-1)
        with np.errstate(over='ignore'):
            return 1.0 + self.s_center * np.exp(self.bk * (U - self.u_center))


def build_r1_llb(point: SurrogatePoint, scenario: Scenario, params: Optional[ChannelParams] = None) -> R1Surrogate:
    units = _Units.of(scenario, params)
    H = units.altitude
    P = np.transpose(point.p_ref)[None, :, :]                     # 1 × N × K
    x_ref = np.transpose(point.X_r, (0, 2, 1)) / (H * H)
    y_ref = np.transpose(point.Y_r, (0, 2, 1))
    hbar = units.c12 / (x_ref * y_ref) + units.c3 / x_ref
    S = 1.0 + np.sum(P * hbar, axis=-1)
    O = -P * (units.c12 + units.c3 * y_ref) / (x_ref ** 2 * y_ref) / (S[..., None] * LN2)
    G = -P * units.c12 / (x_ref * y_ref ** 2) / (S[..., None] * LN2)

    u_c = np.maximum(np.transpose(point.U_r, (0, 2, 1)) / (H * H), (DEGENERATE_OFFSET / H) ** 2)
    theta_c = _elevation_norm(u_c)
    s_c = units.a_coef * np.exp(-units.b_coef * (theta_c - units.a_coef))
    kappa = DEG / (2.0 * np.sqrt(u_c) * (1.0 + u_c))
    bk = np.where(P > 0, units.b_coef * kappa, 0.0)
    return R1Surrogate(nodes=scenario.node_positions / H, base=np.log2(S), O=O, G=G,
                       x_ref=x_ref, y_ref=y_ref, u_center=u_c, s_center=s_c, bk=bk,
                       scale=H, log2_noise=units.log2_noise)


# -----------------------
# Ř₂ 凹下界
# -----------------------
@dataclass(frozen=True, eq=False)
class R2Surrogate:
    """−log2(Σ_{i≠k} P_i·(C1C2/(X̃Ỹ) + C3/X̃) + σ²)，在 (X̃, Ỹ) 上凹"""
    power: np.ndarray        # K × N
    c12: float
    c3: float
    scale: float
    log2_noise: float
    s_ref: np.ndarray        # M × K × N，Y_r − 1

    def evaluate(self, k: int, n: int, x_tilde, y_tilde) -> np.ndarray:
        """x_tilde (m²)、y_tilde 形如 (..., K)，第 k 项忽略；返回真实单位"""
        x = np.asarray(x_tilde, dtype=float) / (self.scale ** 2)
        y = np.asarray(y_tilde, dtype=float)
        P = self.power[:, n].copy()
        P[k] = 0.0
        h = P * (self.c12 / (x * y) + self.c3 / x)
        return -np.log2(1.0 + np.sum(h, axis=-1)) - self.log2_noise


def build_r2_lb(point: SurrogatePoint, scenario: Scenario, params: Optional[ChannelParams] = None) -> R2Surrogate:
    units = _Units.of(scenario, params)
    return R2Surrogate(power=point.p_ref, c12=units.c12, c3=units.c3, scale=units.altitude,
                       log2_noise=units.log2_noise, s_ref=point.Y_r - 1.0)


def phi_hessian(x, y, c12: float, c3: float) -> np.ndarray:
    """φ(x,y) = ln(C1C2/(xy) + C3/x) 的 Hessian (…, 2, 2)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape + (2, 2))
    out[..., 0, 0] = 1.0 / x ** 2
    out[..., 1, 1] = 1.0 / y ** 2 - c3 ** 2 / (c12 + c3 * y) ** 2
    return out


# -----------------------
# 几何约束
# -----------------------
@dataclass(frozen=True, eq=False)
class GeometryConstraints:
    """参考点处线性化的几何约束（真实单位）"""
    point: SurrogatePoint
    nodes: np.ndarray
    altitude: float
    d_min: float
    b_coef: float
    v_step: float

    @property
    def num_slots(self) -> int:
        return self.point.a_ref.shape[2]

    def separation_lhs(self, waypoints) -> np.ndarray:
        """‖d_r‖² + 2d_rᵀ(d − d_r)，M × M × (N−1)；满足约束需 ≥ D_min²"""
        q = np.asarray(waypoints, dtype=float)
        N = self.num_slots
        cur = q[:, None, 1:N, :] - q[None, :, 1:N, :]
        ref = self.point.q_ref[:, None, 1:N, :] - self.point.q_ref[None, :, 1:N, :]
        return np.sum(ref * ref, axis=-1) + 2.0 * np.sum(ref * (cur - ref), axis=-1)

    def u_bound(self, waypoints) -> np.ndarray:
        """‖q − g‖² 的线性下界，M × K × N"""
        q = np.asarray(waypoints, dtype=float)[:, None, :self.num_slots, :]
        c = self.point.q_ref[:, None, :self.num_slots, :]
        g = self.nodes[None, :, None, :]
        v = c - g
        return np.sum(v * v, axis=-1) + 2.0 * np.sum(v * (q - c), axis=-1)

    def x_bound(self, waypoints) -> np.ndarray:
        return self.u_bound(waypoints) + self.altitude ** 2

    def y_bound(self, theta) -> np.ndarray:
        """exp 在 θ_r 处一阶展开：1 + (Y_r − 1)(1 − B(θ − θ_r))"""
        s = self.point.Y_r - 1.0
        return 1.0 + s * (1.0 - self.b_coef * (np.asarray(theta, dtype=float) - self.point.theta_r))

    def theta_lower(self, u_tilde) -> np.ndarray:
        """θ ≥ (180/π)·atan(H/√Ũ)"""
        return DEG * np.arctan2(self.altitude, np.sqrt(np.maximum(np.asarray(u_tilde, dtype=float), 0.0)))

    def check(self, waypoints, x_tilde=None, u_tilde=None, theta=None, y_tilde=None,
              tol: float = GEOM_TOL) -> List[Violation]:
        """按线性化后的约束审计（不是真实约束）"""
        q = np.asarray(waypoints, dtype=float)
        found: List[Violation] = []
        M = q.shape[0]
        lhs = self.separation_lhs(q)
        for m in range(M):
            for j in range(m + 1, M):
                short = self.d_min ** 2 - lhs[m, j]
                for idx in np.nonzero(short > tol * self.d_min)[0]:
                    found.append(Violation('separation-linear', (m, j, int(idx) + 1), float(short[idx])))
        step = np.linalg.norm(np.diff(q, axis=1), axis=-1) - self.v_step
        for m, n in zip(*np.nonzero(step > tol)):
            found.append(Violation('speed', (int(m), int(n)), float(step[m, n])))
        if x_tilde is not None:
            over = np.asarray(x_tilde) - self.x_bound(q)
            for m, k, n in zip(*np.nonzero(over > tol)):
                found.append(Violation('x-tilde', (int(m), int(k), int(n)), float(over[m, k, n])))
        if u_tilde is not None:
            over = np.asarray(u_tilde) - self.u_bound(q)
            for m, k, n in zip(*np.nonzero(over > tol)):
                found.append(Violation('u-tilde', (int(m), int(k), int(n)), float(over[m, k, n])))
            if theta is not None:
                short = self.theta_lower(u_tilde) - np.asarray(theta)
                for m, k, n in zip(*np.nonzero(short > tol)):
                    found.append(Violation('theta', (int(m), int(k), int(n)), float(short[m, k, n])))
        if theta is not None and y_tilde is not None:
            over = np.asarray(y_tilde) - self.y_bound(theta)
            for m, k, n in zip(*np.nonzero(over > tol)):
                found.append(Violation('y-tilde', (int(m), int(k), int(n)), float(over[m, k, n])))
        return found


def build_geometry_constraints(point: SurrogatePoint, scenario: Scenario, tol: float = GEOM_TOL,
                               params: Optional[ChannelParams] = None) -> GeometryConstraints:
    params = params or scenario.channel
    q = point.q_ref
    N = scenario.num_slots
    M = q.shape[0]
    for m in range(M):
        for j in range(m + 1, M):
            dist = np.linalg.norm(q[m, 1:N] - q[j, 1:N], axis=-1)
            short = scenario.d_min - dist
            if short.size and short.max() > tol:
                n = int(np.argmax(short)) + 1
                v = Violation('separation', (m, j, n), float(short.max()))
                raise InfeasibleLinearizationError(f"参考点防撞距离不足: {v}", v)
    return GeometryConstraints(point=point, nodes=scenario.node_positions, altitude=scenario.altitude,
                               d_min=scenario.d_min, b_coef=params.b_coef,
                               v_step=scenario.v_max * scenario.slot_seconds)


# -----------------------
# 悬停段消元
# -----------------------
class HoverLayout:
    """同一悬停段内的航点共用一个二维变量；含 0 或 N 的段固定在起点"""

    def __init__(self, association, scenario: Scenario):
        a = np.asarray(association)
        M, N = scenario.num_uavs, scenario.num_slots
        serving = a.sum(axis=1) > 0
        group = np.empty((M, N + 1), dtype=int)
        owner, members = [], []
        for m in range(M):
            for n in range(N + 1):
                if n > 0 and serving[m, n - 1]:
                    group[m, n] = group[m, n - 1]
                    members[-1].append(n)
                else:
                    group[m, n] = len(members)
                    owner.append(m)
                    members.append([n])
        fixed = np.array([mem[0] == 0 or mem[-1] == N for mem in members])
        var_of = np.full(len(members), -1)
        free = np.nonzero(~fixed)[0]
        var_of[free] = np.arange(free.size)
        self.scenario = scenario
        self.group = group
        self.owner = np.array(owner)
        self.members = members
        self.fixed = fixed
        self.var_of = var_of
        self.free_groups = free

    @property
    def num_free(self) -> int:
        return int(self.free_groups.size)

    @property
    def num_vars(self) -> int:
        return 2 * self.num_free

    def columns(self) -> np.ndarray:
        """M × (N+1)：航点 x 坐标的变量下标，固定航点为 −1"""
        v = self.var_of[self.group]
        return np.where(v >= 0, 2 * v, -1)

    def reference(self, waypoints) -> np.ndarray:
        """自由段的参考坐标（段内航点均值），num_free × 2"""
        q = np.asarray(waypoints, dtype=float)
        out = np.zeros((self.num_free, 2))
        for v, j in enumerate(self.free_groups):
            out[v] = q[self.owner[j], self.members[j]].mean(axis=0)
        return out

    def waypoints(self, x, scale: float = 1.0) -> np.ndarray:
        M, N = self.scenario.num_uavs, self.scenario.num_slots
        q = np.repeat(self.scenario.uav_initials[:, None, :], N + 1, axis=1).astype(float)
        cols = self.columns()
        mask = cols >= 0
        q[mask] = np.stack([x[cols[mask]], x[cols[mask] + 1]], axis=-1) * scale
        return q


class _Rows:
    """线性不等式 Gx ≤ h 的逐块收集"""

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self.r, self.c, self.v, self.h = [], [], [], []
        self.count = 0

    def add(self, cols, vals, rhs):
        cols = np.atleast_2d(np.asarray(cols, dtype=int))
        vals = np.atleast_2d(np.asarray(vals, dtype=float))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        r = rhs.size
        rows = np.repeat(np.arange(self.count, self.count + r)[:, None], cols.shape[1], axis=1)
        keep = cols >= 0
        self.r.append(rows[keep])
        self.c.append(cols[keep])
        self.v.append(vals[keep])
        self.h.append(rhs)
        self.count += r

    def matrix(self):
        if not self.count:
            return None, None
        G = sp.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                          shape=(self.count, self.num_vars))
        return G, np.concatenate(self.h)


def _point_terms(cols: np.ndarray, fixed_pos: np.ndarray, coef: np.ndarray):
    """系数 coef·q（q 为 2 维）→ (列, 值, 移到右端的常数)"""
    if cols >= 0:
        return [cols, cols + 1], [coef[0], coef[1]], 0.0
    return [-1, -1], [0.0, 0.0], float(coef @ fixed_pos)


def _speed_blocks(layout: HoverLayout, scenario: Scenario, scale: float) -> List[SmoothConstraint]:
    """‖q[n+1] − q[n]‖²/(Vδ)² − 1 ≤ 0，只对跨段的飞行时隙"""
    limit2 = (scenario.v_max * scenario.slot_seconds / scale) ** 2
    cols = layout.columns()
    M, N = scenario.num_uavs, scenario.num_slots
    pairs, anchored, anchors = [], [], []
    for m in range(M):
        for n in range(N):
            if layout.group[m, n] == layout.group[m, n + 1]:
                continue
            ca, cb = cols[m, n], cols[m, n + 1]
            if ca >= 0 and cb >= 0:
                pairs.append([ca, ca + 1, cb, cb + 1])
            elif ca >= 0 or cb >= 0:
                c = ca if ca >= 0 else cb
                anchored.append([c, c + 1])
                anchors.append(scenario.uav_initials[m] / scale)
    blocks = []
    if pairs:
        def pair_fun(Z, derivs):
            d = Z[:, 2:4] - Z[:, 0:2]
            val = np.sum(d * d, axis=1) / limit2 - 1.0
            if not derivs:
                return val
            grad = np.hstack([-2.0 * d, 2.0 * d]) / limit2
            block = np.kron(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.eye(2)) * (2.0 / limit2)
            return val, grad, np.broadcast_to(block, (Z.shape[0], 4, 4))
        blocks.append(SmoothConstraint(idx=np.array(pairs), fun=pair_fun, name='speed'))
    if anchored:
        anchor = np.array(anchors)

        def anchor_fun(Z, derivs):
            d = Z - anchor
            val = np.sum(d * d, axis=1) / limit2 - 1.0
            if not derivs:
                return val
            hess = np.broadcast_to(np.eye(2) * (2.0 / limit2), (Z.shape[0], 2, 2))
            return val, 2.0 * d / limit2, hess
        blocks.append(SmoothConstraint(idx=np.array(anchored), fun=anchor_fun, name='speed-anchor'))
    return blocks


def _separation_rows(layout: HoverLayout, q_ref: np.ndarray, scenario: Scenario, scale: float, rows: _Rows,
                     tol: float = GEOM_TOL):
    """−2d_rᵀq_m + 2d_rᵀq_j ≤ −‖d_r‖² − D²（归一化单位，按段对去重）"""
    q = q_ref / scale
    D2 = (scenario.d_min / scale) ** 2
    cols = layout.columns()
    M, N = scenario.num_uavs, scenario.num_slots
    seen = set()
    for m in range(M):
        for j in range(m + 1, M):
            for n in range(1, N):
                d = q[m, n] - q[j, n]
                key = (layout.group[m, n], layout.group[j, n], round(d[0], 12), round(d[1], 12))
                if key in seen:
                    continue
                seen.add(key)
                rhs = -float(d @ d) - D2
                cm, vm, km = _point_terms(cols[m, n], scenario.uav_initials[m] / scale, -2.0 * d)
                cj, vj, kj = _point_terms(cols[j, n], scenario.uav_initials[j] / scale, 2.0 * d)
                rhs -= km + kj
                if cols[m, n] < 0 and cols[j, n] < 0:
                    if rhs < -tol / scale:
                        v = Violation('separation', (m, j, n), float(-rhs))
                        raise InfeasibleLinearizationError(f"固定航点违反防撞距离: {v}", v)
                    continue
                rows.add([cm + cj], [vm + vj], [rhs])


# -----------------------
# 航迹子问题
# -----------------------
def _elevation_fun(theta_r: np.ndarray, b: float):
    """B(θ(Ũ') − θ_r) − τ ≤ 0，θ(u) = (180/π)·atan(1/√u) 在 u > 0 上凸"""
    def fun(Z, derivs):
        u = Z[:, 0]
        tau = Z[:, 1]
        with np.errstate(invalid='ignore', divide='ignore'):
            root = np.sqrt(u)
            val = b * (DEG * np.arctan2(1.0, root) - theta_r) - tau
        val = np.where(u > 0, val, np.nan)
        if not derivs:
            return val
        d1 = -DEG / (2.0 * root * (1.0 + u))
        d2 = DEG * (0.25 / (u * root * (1.0 + u)) + 0.5 / (root * (1.0 + u) ** 2))
        grad = np.stack([b * d1, -np.ones_like(u)], axis=1)
        hess = np.zeros((u.size, 2, 2))
        hess[:, 0, 0] = b * d2
        return val, grad, hess
    return fun


def _served_rate_fun(const: dict, q_free: bool, c12: float, c3: float):
    """t − R̂₁(q) − R̂₂(X̃, y) ≤ 0（bits/s/Hz，噪声项已抵消）"""
    g = const['nodes']
    O, Gc = const['O'], const['G']
    x_ref, y_ref = const['x_ref'], const['y_ref']
    u_c, s_c, bk, base = const['u_c'], const['s_c'], const['bk'], const['base']
    q_fixed = const['q']
    P, s = const['P'], const['s']
    off = 3 if q_free else 1

    def fun(Z, derivs):
        r, w = Z.shape
        t = Z[:, 0]
        q = Z[:, 1:3] if q_free else q_fixed
        xt = Z[:, off::2]
        yv = Z[:, off + 1::2]
        d = q[:, None, :] - g[None, :, :]
        U = np.sum(d * d, axis=-1)
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            e = np.exp(bk * (U - u_c))
            r1 = base + np.sum(O * (U + 1.0 - x_ref), axis=1) + np.sum(Gc * (s_c * e + 1.0 - y_ref), axis=1)
            z = 1.0 + s * yv
            h = P * (c12 / (xt * z) + c3 / xt)
            S2 = 1.0 + np.sum(h, axis=1)
            val = t - r1 + np.log(S2) / LN2
        bad = np.any(xt <= 0, axis=1) | np.any(z <= 0, axis=1) | ~np.isfinite(val)
        val = np.where(bad, np.nan, val)
        if not derivs:
            return val

        grad = np.zeros((r, w))
        hess = np.zeros((r, w, w))
        grad[:, 0] = 1.0
        if q_free:
            ge = Gc * s_c * e * bk
            coef = O + ge
            grad[:, 1:3] = -2.0 * np.einsum('rk,rkd->rd', coef, d)
            hq = 2.0 * coef.sum(axis=1)[:, None, None] * np.eye(2)[None] \
                + 4.0 * np.einsum('rk,rkd,rke->rde', ge * bk, d, d)
            hess[:, 1:3, 1:3] = -hq
        L = xt.shape[1]
        if L:
            dx = -h / xt
            dy = -P * c12 * s / (xt * z * z)
            dxx = 2.0 * h / (xt * xt)
            dxy = P * c12 * s / (xt * xt * z * z)
            dyy = 2.0 * P * c12 * s * s / (xt * z ** 3)
            gS = np.empty((r, 2 * L))
            gS[:, 0::2] = dx
            gS[:, 1::2] = dy
            inv = 1.0 / (S2 * LN2)
            grad[:, off:] = gS * inv[:, None]
            block = -np.einsum('ri,rj->rij', gS, gS) * (inv / S2)[:, None, None]
            for l in range(L):
                i, j = 2 * l, 2 * l + 1
                block[:, i, i] += dxx[:, l] * inv
                block[:, i, j] += dxy[:, l] * inv
                block[:, j, i] += dxy[:, l] * inv
                block[:, j, j] += dyy[:, l] * inv
            hess[:, off:, off:] = block
        return val, grad, hess
    return fun


@dataclass(eq=False)
class TrajectorySubproblem:
    program: ConvexProgram
    layout: HoverLayout
    scale: float
    r1: R1Surrogate
    r2: R2Surrogate
    geometry: GeometryConstraints
    served: np.ndarray          # S × 3 (m, k, n)
    triples: np.ndarray         # T × 3 (m, i, n)
    t_index: np.ndarray
    zeta_k_index: np.ndarray
    zeta_index: int

    @property
    def O(self) -> np.ndarray:
        return self.r1.O

    @property
    def G(self) -> np.ndarray:
        return self.r1.G

    def waypoints(self, x) -> np.ndarray:
        return self.layout.waypoints(np.asarray(x, dtype=float), self.scale)

    def restricted_objective(self, x) -> float:
        """ζ（bits/s/Hz·slot）"""
        return float(np.asarray(x)[self.zeta_index])


def build_trajectory_subproblem(point: SurrogatePoint, scenario: Scenario,
                                params: Optional[ChannelParams] = None,
                                weight: float = SUM_RATE_WEIGHT) -> TrajectorySubproblem:
    params = params or scenario.channel
    units = _Units.of(scenario, params)
    H = units.altitude
    B = units.b_coef
    geometry = build_geometry_constraints(point, scenario, params=params)
    r1 = build_r1_llb(point, scenario, params)
    r2 = build_r2_lb(point, scenario, params)
    layout = HoverLayout(point.a_ref, scenario)
    K = scenario.num_nodes
    P = point.p_ref
    q_norm = point.q_ref / H
    g_norm = scenario.node_positions / H
    cols = layout.columns()

    served = np.argwhere(np.asarray(point.a_ref) == 1)
    served = served[np.lexsort((served[:, 0], served[:, 2]))] if served.size else served.reshape(0, 3)
    interferers = [[i for i in range(K) if i != k and P[i, n] > 0] for m, k, n in served]
    triples = np.array([(m, i, n) for (m, k, n), lst in zip(served, interferers) for i in lst],
                       dtype=int).reshape(-1, 3)
    T = len(triples)
    offset = np.sqrt(point.U_r[triples[:, 0], triples[:, 1], triples[:, 2]]) if T else np.zeros(0)
    nondeg = offset >= DEGENERATE_OFFSET
    u_index = np.full(T, -1)

    base_triple = layout.num_vars
    u_start = base_triple + 3 * T
    u_index[nondeg] = u_start + np.arange(int(nondeg.sum()))
    t_start = u_start + int(nondeg.sum())
    S = len(served)
    t_index = t_start + np.arange(S)
    zk_index = t_start + S + np.arange(K)
    z_index = int(t_start + S + K)
    nv = z_index + 1

    rows = _Rows(nv)
    x0 = np.zeros(nv)
    ref_groups = layout.reference(point.q_ref) / H
    x0[:layout.num_vars] = ref_groups.ravel()

    # 辅助变量行
    for j, (m, i, n) in enumerate(triples):
        xi, yi, ti = base_triple + 3 * j, base_triple + 3 * j + 1, base_triple + 3 * j + 2
        c = q_norm[m, n]
        v = c - g_norm[i]
        u_c = float(v @ v)
        qc, qv, const = _point_terms(cols[m, n], c, -2.0 * v)
        rhs_lin = u_c - 2.0 * float(v @ c) - const
        rows.add([[xi] + qc], [[1.0] + qv], [1.0 + rhs_lin])
        rows.add([[xi]], [[-1.0]], [-X_FLOOR])
        rows.add([[yi]], [[-1.0]], [0.0])
        rows.add([[yi, ti]], [[1.0, 1.0]], [1.0])
        theta_r = float(point.theta_r[m, i, n])
        x0[xi] = (1.0 + u_c) * (1.0 - START_MARGIN)
        if nondeg[j]:
            ui = u_index[j]
            rows.add([[ui] + qc], [[1.0] + qv], [rhs_lin])
            rows.add([[ui]], [[-1.0]], [-U_FLOOR_RATIO * u_c])
            x0[ui] = u_c * (1.0 - START_MARGIN)
            x0[ti] = B * (_elevation_norm(x0[ui]) - theta_r) + START_MARGIN
        else:
            rows.add([[ti]], [[-1.0]], [-B * (90.0 - theta_r)])
            x0[ti] = B * (90.0 - theta_r) + START_MARGIN
        x0[yi] = max(1.0 - x0[ti], 0.0) * (1.0 - START_MARGIN)

    # 速率上图行
    for k in range(K):
        mine = np.nonzero(served[:, 1] == k)[0] if S else np.zeros(0, dtype=int)
        rows.add([[zk_index[k]] + list(t_index[mine])], [[1.0] + [-1.0] * mine.size], [0.0])
        rows.add([[z_index, zk_index[k]]], [[1.0, -1.0]], [0.0])
    G, h = rows.matrix()

    smooth: List[SmoothConstraint] = _speed_blocks(layout, scenario, H)
    if nondeg.any():
        sel = np.nonzero(nondeg)[0]
        idx = np.stack([u_index[sel], base_triple + 3 * sel + 2], axis=1)
        th = point.theta_r[triples[sel, 0], triples[sel, 1], triples[sel, 2]]
        smooth.append(SmoothConstraint(idx=idx, fun=_elevation_fun(th, B), name='elevation'))

    # 服务时隙按 (干扰数, 航点是否自由) 分组
    triple_of = {}
    for j, (m, i, n) in enumerate(triples):
        triple_of[(m, i, n)] = j
    groups: Dict[Tuple[int, bool], List[int]] = {}
    for s_idx, (m, k, n) in enumerate(served):
        key = (len(interferers[s_idx]), bool(cols[m, n] >= 0))
        groups.setdefault(key, []).append(s_idx)
    for (L, q_free), members in sorted(groups.items()):
        idx_rows, const = [], {key: [] for key in ('O', 'G', 'x_ref', 'y_ref', 'u_c', 's_c', 'bk',
                                                    'base', 'q', 'P', 's')}
        for s_idx in members:
            m, k, n = served[s_idx]
            row = [t_index[s_idx]]
            if q_free:
                row += [cols[m, n], cols[m, n] + 1]
            for i in interferers[s_idx]:
                j = triple_of[(m, i, n)]
                row += [base_triple + 3 * j, base_triple + 3 * j + 1]
            idx_rows.append(row)
            const['O'].append(r1.O[m, n])
            const['G'].append(r1.G[m, n])
            const['x_ref'].append(r1.x_ref[m, n])
            const['y_ref'].append(r1.y_ref[m, n])
            const['u_c'].append(r1.u_center[m, n])
            const['s_c'].append(r1.s_center[m, n])
            const['bk'].append(r1.bk[m, n])
            const['base'].append(r1.base[m, n])
            const['q'].append(q_norm[m, n])
            const['P'].append([P[i, n] for i in interferers[s_idx]])
            const['s'].append([r2.s_ref[m, i, n] for i in interferers[s_idx]])
        arrays = {key: np.array(val, dtype=float) for key, val in const.items()}
        arrays['P'] = arrays['P'].reshape(len(members), L)
        arrays['s'] = arrays['s'].reshape(len(members), L)
        arrays['nodes'] = g_norm
        fun = _served_rate_fun(arrays, q_free, units.c12, units.c3)
        con = SmoothConstraint(idx=np.array(idx_rows, dtype=int), fun=fun, name=f'rate-L{L}')
        rate0 = -con.values(x0)
        x0[con.idx[:, 0]] = rate0 - START_MARGIN * (1.0 + np.abs(rate0))
        smooth.append(con)

    for k in range(K):
        mine = np.nonzero(served[:, 1] == k)[0] if S else np.zeros(0, dtype=int)
        x0[zk_index[k]] = (x0[t_index[mine]].sum() if mine.size else 0.0) - START_MARGIN
    x0[z_index] = x0[zk_index].min() - START_MARGIN

    c = np.zeros(nv)
    c[z_index] = -1.0
    c[zk_index] = -weight
    program = ConvexProgram(c=c, x0=x0, G=G, h=h, smooth=smooth)
    return TrajectorySubproblem(program=program, layout=layout, scale=H, r1=r1, r2=r2, geometry=geometry,
                                served=served, triples=triples, t_index=t_index,
                                zeta_k_index=zk_index, zeta_index=z_index)


# -----------------------
# 悬停重投影
# -----------------------
def project_hover(waypoints, association, scenario: Scenario,
                  settings: Optional[BarrierSettings] = None) -> np.ndarray:
    """min Σ‖q − q_r‖²，满足端点、悬停段、速度与参考点处线性化的防撞约束"""
    H = scenario.altitude
    q_ref = np.asarray(waypoints, dtype=float)
    layout = HoverLayout(association, scenario)
    F = layout.num_free
    if F == 0:
        return layout.waypoints(np.zeros(0), H)
    nv = 2 * F + F
    q_norm = q_ref / H
    count = np.array([len(layout.members[j]) for j in layout.free_groups], dtype=float)
    total = np.array([q_norm[layout.owner[j], layout.members[j]].sum(axis=0) for j in layout.free_groups])
    sumsq = np.array([np.sum(q_norm[layout.owner[j], layout.members[j]] ** 2) for j in layout.free_groups])

    def fit_fun(Z, derivs):
        Q = Z[:, 0:2]
        val = count * np.sum(Q * Q, axis=1) - 2.0 * np.sum(Q * total, axis=1) + sumsq - Z[:, 2]
        if not derivs:
            return val
        grad = np.hstack([2.0 * count[:, None] * Q - 2.0 * total, -np.ones((Q.shape[0], 1))])
        hess = np.zeros((Q.shape[0], 3, 3))
        hess[:, 0, 0] = hess[:, 1, 1] = 2.0 * count
        return val, grad, hess

    var = np.arange(F)
    idx = np.stack([2 * var, 2 * var + 1, 2 * F + var], axis=1)
    smooth = [SmoothConstraint(idx=idx, fun=fit_fun, name='hover-fit')] + _speed_blocks(layout, scenario, H)
    rows = _Rows(nv)
    _separation_rows(layout, q_ref, scenario, H, rows)
    G, h = rows.matrix()
    x0 = np.zeros(nv)
    x0[:2 * F] = (total / count[:, None]).ravel()
    x0[2 * F:] = fit_fun(x0[idx], False) + 1.0
    c = np.zeros(nv)
    c[2 * F:] = 1.0
    res = solve_convex_restriction(ConvexProgram(c=c, x0=x0, G=G, h=h, smooth=smooth), settings or SCA_SETTINGS)
    return layout.waypoints(res.x, H)


# -----------------------
# 关联 LP
# -----------------------
def round_association(relaxed: np.ndarray) -> np.ndarray:
    """≥ 0.5 取 1；同一节点多架 UAV 时保留松弛值最大者（平局取小 UAV 下标），同一 UAV 多节点同理"""
    r = np.asarray(relaxed, dtype=float)
    a = (r >= ROUND_THRESHOLD - 1e-9).astype(np.int8)
    for k, n in zip(*np.nonzero(a.sum(axis=0) > 1)):
        keep = int(np.argmax(np.where(a[:, k, n] == 1, r[:, k, n], -np.inf)))
        a[:, k, n] = 0
        a[keep, k, n] = 1
    for m, n in zip(*np.nonzero(a.sum(axis=1) > 1)):
        keep = int(np.argmax(np.where(a[m, :, n] == 1, r[m, :, n], -np.inf)))
        a[m, :, n] = 0
        a[m, keep, n] = 1
    return a


def association_rates(gains_avg, powers, scenario: Scenario, price_power=None) -> np.ndarray:
    """log2(1 + Γ̄_{m,k}[n])，M × K × N；P_k = 0 的信号项用 price_power 功率定价"""
    g = np.asarray(gains_avg, dtype=float)
    P = np.asarray(powers, dtype=float)
    signal_power = P if price_power is None else np.where(P > 0, P, np.asarray(price_power, dtype=float))
    received = g * P[None, :, :]
    interference = received.sum(axis=1, keepdims=True) - received
    gamma = g * signal_power[None, :, :] / (interference + scenario.noise_power)
    return np.log1p(gamma) / LN2


def solve_association_lp(gains_avg, powers, scenario: Scenario, allowed=None, price_power=None,
                         weight: float = SUM_RATE_WEIGHT, return_relaxed: bool = False):
    """max ζ + w·Σcoef·a  s.t. ζ ≤ Σ coef·a（每个节点），行/列和 ≤ 1，0 ≤ a ≤ 1"""
    coef = association_rates(gains_avg, powers, scenario, price_power)
    M, K, N = coef.shape
    mask = coef > 0
    if allowed is not None:
        mask &= np.broadcast_to(np.asarray(allowed, dtype=bool), coef.shape)
    var = np.argwhere(mask)
    J = len(var)
    relaxed = np.zeros((M, K, N))
    if J == 0:
        a = np.zeros((M, K, N), dtype=np.int8)
        return (a, relaxed) if return_relaxed else a
    vals = coef[mask]
    jj = np.arange(J)
    blocks_r, blocks_c, blocks_v = [], [], []
    # ζ − Σ coef·a ≤ 0
    blocks_r += [var[:, 1], np.arange(K)]
    blocks_c += [jj, np.full(K, J)]
    blocks_v += [-vals, np.ones(K)]
    # Σ_k a ≤ 1 (m, n)
    blocks_r.append(K + var[:, 0] * N + var[:, 2])
    blocks_c.append(jj)
    blocks_v.append(np.ones(J))
    # Σ_m a ≤ 1 (k, n)
    blocks_r.append(K + M * N + var[:, 1] * N + var[:, 2])
    blocks_c.append(jj)
    blocks_v.append(np.ones(J))
    A = sp.csr_matrix((np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
                      shape=(K + M * N + K * N, J + 1))
    b = np.concatenate([np.zeros(K), np.ones(M * N + K * N)])
    c = np.concatenate([-weight * vals, [-1.0]])
    bounds = [(0.0, 1.0)] * J + [(None, None)]
    res = solve_convex_restriction(LinearProgram(c=c, A_ub=A, b_ub=b, bounds=bounds))
    relaxed[mask] = np.clip(res.x[:J], 0.0, 1.0)
    a = round_association(relaxed)
    return (a, relaxed) if return_relaxed else a


def assign_power(association, reference_power, price_power, profile: HarvestProfile, scenario: Scenario) -> np.ndarray:
    """保留已有功率；解除关联的置零；新关联按时间顺序取 min(price_power, 之后最小余量/δ)"""
    a = np.asarray(association)
    served = a.sum(axis=0) > 0
    P_ref = np.asarray(reference_power, dtype=float)
    P = np.where(served, P_ref, 0.0)
    delta = scenario.slot_seconds
    new_pairs = np.argwhere(served & (P_ref <= 0))
    for k, n in sorted(map(tuple, new_pairs), key=lambda kn: (kn[1], kn[0])):
        slack = causality_slack(P, profile, scenario)
        P[k, n] = max(0.0, min(float(price_power[k, n]), float(slack[k, n:].min()) / delta))
    return P


# -----------------------
# 功率子问题
# -----------------------
def _power_rate_fun(a1: np.ndarray, a2: np.ndarray, c2: np.ndarray):
    """t − log2(1 + Σa1·p) + Σa2·p + c2 ≤ 0"""
    def fun(Z, derivs):
        t = Z[:, 0]
        p = Z[:, 1:]
        with np.errstate(invalid='ignore', divide='ignore'):
            S = 1.0 + np.sum(a1 * p, axis=1)
            val = t - np.log(S) / LN2 + np.sum(a2 * p, axis=1) + c2
        val = np.where(S > 0, val, np.nan)
        if not derivs:
            return val
        r, w = Z.shape
        grad = np.empty((r, w))
        grad[:, 0] = 1.0
        grad[:, 1:] = -a1 / (S * LN2)[:, None] + a2
        hess = np.zeros((r, w, w))
        hess[:, 1:, 1:] = np.einsum('ri,rj->rij', a1, a1) / (S * S * LN2)[:, None, None]
        return val, grad, hess
    return fun


@dataclass(eq=False)
class PowerSubproblem:
    program: ConvexProgram
    pairs: np.ndarray          # J × 2 (k, n)
    power_scale: float         # B_max/δ
    shape: Tuple[int, int]
    zeta_index: int

    def powers(self, x) -> np.ndarray:
        P = np.zeros(self.shape)
        if len(self.pairs):
            P[self.pairs[:, 0], self.pairs[:, 1]] = np.maximum(np.asarray(x)[:len(self.pairs)], 0.0) * self.power_scale
        return P


def build_power_subproblem(plan: Plan, profile: HarvestProfile, scenario: Scenario,
                           params: Optional[ChannelParams] = None,
                           weight: float = SUM_RATE_WEIGHT) -> PowerSubproblem:
    K, N = scenario.num_nodes, scenario.num_slots
    delta = scenario.slot_seconds
    cap = scenario.battery_capacity
    scale = cap / delta
    ext = profile.extended()
    e_norm = ext / cap
    prefix = np.cumsum(ext, axis=1)[:, :N] > 0
    a = np.asarray(plan.association)
    served_kn = a.sum(axis=0) > 0
    var_mask = served_kn & prefix
    pairs = np.argwhere(var_mask)
    J = len(pairs)
    p_col = -np.ones((K, N), dtype=int)
    p_col[pairs[:, 0], pairs[:, 1]] = np.arange(J)
    p_ref = plan.power / scale

    # 电池下界变量（仅溢出模式）
    b_col = -np.ones((K, N), dtype=int)
    b_span = {}
    count = J
    if scenario.battery_spill:
        for k in range(K):
            slots = np.nonzero(var_mask[k])[0]
            if not slots.size:
                continue
            n0 = int(np.argmax(prefix[k]))
            n1 = int(slots[-1])
            b_col[k, n0:n1 + 1] = count + np.arange(n1 - n0 + 1)
            b_span[k] = (n0, n1)
            count += n1 - n0 + 1

    served = np.argwhere(a == 1)
    S = len(served)
    t_index = count + np.arange(S)
    zk_index = count + S + np.arange(K)
    z_index = int(count + S + K)
    nv = z_index + 1
    rows = _Rows(nv)
    x0 = np.zeros(nv)
    x0[:J] = p_ref[pairs[:, 0], pairs[:, 1]]

    for j in range(J):
        rows.add([[j]], [[-1.0]], [0.0])
        rows.add([[j]], [[1.0]], [1.0])
    if scenario.battery_spill:
        battery, _ = spill_ledger(plan.power * delta, ext, cap)
        for k, (n0, n1) in b_span.items():
            first = b_col[k, n0]
            rows.add([[first]], [[1.0]], [min(ext[k, n0], cap) / cap])
            for n in range(n0, n1 + 1):
                bc = b_col[k, n]
                rows.add([[bc]], [[1.0]], [1.0])
                rows.add([[bc]], [[-1.0]], [0.0])
                x0[bc] = battery[k, n] / cap
                if p_col[k, n] >= 0:
                    rows.add([[p_col[k, n], bc]], [[1.0, -1.0]], [0.0])
                if n < n1:
                    nxt = [b_col[k, n + 1], bc] + ([p_col[k, n]] if p_col[k, n] >= 0 else [])
                    coefs = [1.0, -1.0] + ([1.0] if p_col[k, n] >= 0 else [])
                    rows.add([nxt], [coefs], [e_norm[k, n + 1]])
    else:
        cum = np.cumsum(e_norm, axis=1)
        for k in range(K):
            for n in range(N + 1):
                before = [p_col[k, l] for l in range(n) if p_col[k, l] >= 0]
                slack = 1.0 - cum[k, n]
                if before:
                    rows.add([before], [[-1.0] * len(before)], [slack])
                elif slack < -1e-12:
                    raise InfeasibleProblemError(f"节点 {k} 在时隙 {n} 超出电池容量（与功率无关）")
                if n < N:
                    upto = before + ([p_col[k, n]] if p_col[k, n] >= 0 else [])
                    if upto:
                        rows.add([upto], [[1.0] * len(upto)], [cum[k, n]])

    # 速率行
    gains = average_gain_grid(plan.waypoints, scenario, params)
    hp = gains * scale / scenario.noise_power
    by_width: Dict[int, List[Tuple[int, list, list, list, float]]] = {}
    rates0 = np.zeros(S)
    t_low = np.zeros(S)
    for s_idx, (m, k, n) in enumerate(served):
        live = [i for i in range(K) if p_col[i, n] >= 0]
        h_mn = hp[m, :, n]
        others = np.arange(K) != k
        S2r = 1.0 + float(np.sum(h_mn[others] * p_ref[others, n]))
        lin = np.where(others, h_mn / (S2r * LN2), 0.0)
        c2 = math.log2(S2r) - float(np.sum(lin * p_ref[:, n]))
        rates0[s_idx] = math.log2(1.0 + float(np.sum(h_mn * p_ref[:, n]))) - math.log2(S2r)
        # 0 ≤ p ≤ 1 时代理速率不低于 −Σlin − c2
        t_low[s_idx] = -float(np.sum(lin[live])) - c2 - 1.0
        rows.add([[t_index[s_idx]]], [[-1.0]], [-t_low[s_idx]])
        by_width.setdefault(len(live), []).append(
            (s_idx, [p_col[i, n] for i in live], [h_mn[i] for i in live], [lin[i] for i in live], c2))
        x0[t_index[s_idx]] = rates0[s_idx] - START_MARGIN * (1.0 + abs(rates0[s_idx]))

    smooth = []
    for width, entries in sorted(by_width.items()):
        if width == 0:
            for s_idx, _, _, _, c2 in entries:
                rows.add([[t_index[s_idx]]], [[1.0]], [-c2])
            continue
        idx = np.array([[t_index[s_idx]] + cols for s_idx, cols, _, _, _ in entries], dtype=int)
        a1 = np.array([row[2] for row in entries], dtype=float)
        a2 = np.array([row[3] for row in entries], dtype=float)
        c2 = np.array([row[4] for row in entries], dtype=float)
        smooth.append(SmoothConstraint(idx=idx, fun=_power_rate_fun(a1, a2, c2), name=f'power-rate-{width}'))

    zk_low = np.zeros(K)
    for k in range(K):
        mine = np.nonzero(served[:, 1] == k)[0] if S else np.zeros(0, dtype=int)
        rows.add([[zk_index[k]] + list(t_index[mine])], [[1.0] + [-1.0] * mine.size], [0.0])
        rows.add([[z_index, zk_index[k]]], [[1.0, -1.0]], [0.0])
        zk_low[k] = (t_low[mine].sum() if mine.size else 0.0) - 1.0
        rows.add([[zk_index[k]]], [[-1.0]], [-zk_low[k]])
        x0[zk_index[k]] = (x0[t_index[mine]].sum() if mine.size else 0.0) - START_MARGIN
    rows.add([[z_index]], [[-1.0]], [-(zk_low.min() - 1.0)])
    x0[z_index] = x0[zk_index].min() - START_MARGIN
    G, h = rows.matrix()
    c = np.zeros(nv)
    c[z_index] = -1.0
    c[zk_index] = -weight
    program = ConvexProgram(c=c, x0=x0, G=G, h=h, smooth=smooth)
    return PowerSubproblem(program=program, pairs=pairs, power_scale=scale, shape=(K, N), zeta_index=z_index)


# -----------------------
# 目标与单块 SCA
# -----------------------
def max_min_objective(plan: Plan, scenario: Scenario, params: Optional[ChannelParams] = None) -> float:
    """平均信道下最差节点的累计速率 min_k Σ_n R_{k,n} (bits/s·slot)"""
    return evaluate_plan(plan, average_gain_grid(plan.waypoints, scenario, params), scenario).worst


@dataclass
class StageResult:
    plan: Plan
    trace: List[float]
    status: str
    iterations: int = 0


def _improves(new: float, old: float) -> bool:
    return new > old


def solve_trajectory_sca(a_fixed, p_fixed, q_init, scenario: Scenario, params: Optional[ChannelParams] = None,
                         tol: float = INNER_TOL, max_iters: int = INNER_MAX_ITERS,
                         settings: Optional[BarrierSettings] = None, weight: float = SUM_RATE_WEIGHT,
                         verbose: bool = False) -> StageResult:
    plan = Plan(waypoints=q_init, association=a_fixed, power=p_fixed)
    f = max_min_objective(plan, scenario, params)
    trace = [f]
    status = 'iteration-cap'
    it = 0
    for it in range(1, max_iters + 1):
        point = SurrogatePoint.from_plan(plan, scenario, params)
        sub = build_trajectory_subproblem(point, scenario, params, weight)
        if sub.layout.num_free == 0 or len(sub.served) == 0:
            status = 'converged'
            break
        res = solve_convex_restriction(sub.program, settings or SCA_SETTINGS)
        cand = plan.replace(waypoints=sub.waypoints(res.x))
        problems = validate_plan(scenario, cand)
        if problems:
            if verbose:
                print(f"  [SCA] 第 {it} 次候选不可行，保留当前计划: {problems[0]}")
            status = 'infeasible-candidate'
            break
        f_new = max_min_objective(cand, scenario, params)
        if verbose:
            print(f"  [P6] 第 {it} 次: 真实目标 {f:.6g} → {f_new:.6g} (Newton {res.newton_steps}, {res.status})")
        if not _improves(f_new, f):
            status = 'converged'
            break
        gain = f_new - f
        plan, f = cand, f_new
        trace.append(f)
        if gain < tol * max(abs(trace[-2]), 1e-12):
            status = 'converged'
            break
    return StageResult(plan=plan, trace=trace, status=status, iterations=it)


def solve_power_sca(a_fixed, q_fixed, p_init, scenario: Scenario, profile: HarvestProfile,
                    params: Optional[ChannelParams] = None, tol: float = INNER_TOL,
                    max_iters: int = INNER_MAX_ITERS, settings: Optional[BarrierSettings] = None,
                    weight: float = SUM_RATE_WEIGHT, verbose: bool = False) -> StageResult:
    plan = Plan(waypoints=q_fixed, association=a_fixed, power=p_init)
    f = max_min_objective(plan, scenario, params)
    trace = [f]
    status = 'iteration-cap'
    it = 0
    for it in range(1, max_iters + 1):
        sub = build_power_subproblem(plan, profile, scenario, params, weight)
        if len(sub.pairs) == 0:
            status = 'converged'
            break
        res = solve_convex_restriction(sub.program, settings or SCA_SETTINGS)
        cand = plan.replace(power=sub.powers(res.x))
        problems = validate_plan(scenario, cand, profile=profile)
        if problems:
            if verbose:
                print(f"  [SCA] 第 {it} 次候选不可行，保留当前计划: {problems[0]}")
            status = 'infeasible-candidate'
            break
        f_new = max_min_objective(cand, scenario, params)
        if verbose:
            print(f"  [P8] 第 {it} 次: 真实目标 {f:.6g} → {f_new:.6g} (Newton {res.newton_steps}, {res.status})")
        if not _improves(f_new, f):
            status = 'converged'
            break
        gain = f_new - f
        plan, f = cand, f_new
        trace.append(f)
        if gain < tol * max(abs(trace[-2]), 1e-12):
            status = 'converged'
            break
    return StageResult(plan=plan, trace=trace, status=status, iterations=it)


def association_step(plan: Plan, profile: HarvestProfile, scenario: Scenario,
                     params: Optional[ChannelParams] = None, optimize_trajectory: bool = True,
                     optimize_power: bool = True, weight: float = SUM_RATE_WEIGHT,
                     settings: Optional[BarrierSettings] = None, verbose: bool = False) -> Tuple[Plan, float]:
    """关联 LP + 候选筛选；只接受可行且目标不降的候选"""
    f_cur = max_min_objective(plan, scenario, params)
    gains = average_gain_grid(plan.waypoints, scenario, params)
    price_power = sustainable_power(profile, scenario)
    hovering = plan.hovering()
    candidates = []
    a_hover = solve_association_lp(gains, plan.power, scenario, allowed=hovering[:, None, :],
                                   price_power=price_power, weight=weight)
    candidates.append(('hover', a_hover, plan.waypoints))

    if optimize_trajectory:
        a_all, relaxed = solve_association_lp(gains, plan.power, scenario, price_power=price_power,
                                              weight=weight, return_relaxed=True)
        moving = (a_all.sum(axis=1) > 0) & ~hovering
        if moving.any():
            top = max(1, int(MOVING_FRACTION * scenario.num_slots))
            score = np.where(moving, relaxed.max(axis=1), -np.inf)
            order = np.argsort(-score, axis=None, kind='stable')[:int(moving.sum())]
            keep = set(zip(*np.unravel_index(order[:top], moving.shape)))
            a_move = a_all.copy()
            for m, n in zip(*np.nonzero(moving)):
                if (m, n) not in keep:
                    a_move[m, :, n] = 0
            try:
                q_proj = project_hover(plan.waypoints, a_move, scenario, settings)
                candidates.append(('moving', a_move, q_proj))
            except (InfeasibleProblemError, SolverFailure, InfeasibleLinearizationError) as exc:
                if verbose:
                    print(f"  [P3] 悬停重投影失败，只保留悬停时隙候选: {exc}")

    best_plan, best_f = plan, f_cur
    for label, a_new, q_new in candidates:
        if optimize_power:
            P_new = assign_power(a_new, plan.power, price_power, profile, scenario)
        else:
            P_new = exhaustive_power(profile, a_new, scenario)
        cand = Plan(waypoints=q_new, association=a_new, power=P_new)
        if validate_plan(scenario, cand, profile=profile):
            if verbose:
                print(f"  [P3] 候选 {label} 不可行，跳过")
            continue
        f_new = max_min_objective(cand, scenario, params)
        if verbose:
            print(f"  [P3] 候选 {label}: {f_new:.6g}")
        if f_new >= best_f:
            best_plan, best_f = cand, f_new
    return best_plan, best_f


# -----------------------
# 交替优化主循环
# -----------------------
@dataclass(eq=False)
class SolveOutcome:
    plan: Plan
    objective_trace: List[float]
    inner_traces: List[dict]
    status: str
    stage_trace: List[Tuple[int, str, float]] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    message: str = ''

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def iterations(self) -> int:
        return len(self.objective_trace) - 1

    def is_monotone(self, tol: float = MONOTONE_TOL) -> bool:
        values = [row[2] for row in self.stage_trace] or self.objective_trace
        return all(b >= a - tol * max(1.0, abs(a)) for a, b in zip(values, values[1:]))

    def stage_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.stage_trace, columns=['outer', 'stage', 'objective'])

    def to_document(self) -> dict:
        return {
            'status': self.status,
            'message': self.message,
            'objective': self.objective,
            'objective_trace': list(self.objective_trace),
            'inner_traces': self.inner_traces,
            'timings': self.timings,
        }

    def to_json(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_document(), f, indent=2, ensure_ascii=False)

    def to_csv(self, path: str):
        self.stage_frame().to_csv(path, index=False)

    def save(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        save_plan(self.plan, directory)
        self.to_json(os.path.join(directory, 'trace.json'))
        self.to_csv(os.path.join(directory, 'stages.csv'))


def _stationary_waypoints(scenario: Scenario) -> np.ndarray:
    return np.repeat(scenario.uav_initials[:, None, :].astype(float), scenario.num_slots + 1, axis=1)


def initial_plan(scenario: Scenario, profile: HarvestProfile, fixed_trajectory: bool = False) -> Plan:
    """候选航线 + 最近关联（严格容量下修补）+ 耗尽式功率，取可行者中目标最大的一个

    M = 2 时候选为 UC/CC/SLC，否则为通用圆形巡航；另加起点悬停。
    fixed_trajectory=True（不优化航迹的变体）只用 UC 或圆形巡航，航线放不下时退回起点悬停。
    """
    if scenario.num_uavs == 2:
        kinds = ['UC'] if fixed_trajectory else ['UC', 'CC', 'SLC']
        builders = [lambda kind=kind: heuristic_trajectory(kind, scenario) for kind in kinds]
    else:
        builders = [lambda: circle_tour(scenario)]
    tours = []
    for build in builders:
        try:
            tours.append(build())
        except ValueError:
            continue
    if not fixed_trajectory or not tours:
        tours.append(_stationary_waypoints(scenario))

    plans = []
    for q in tours:
        a = relieve_capacity(nearest_association(q, scenario), q, profile, scenario)
        plans.append(Plan(waypoints=q, association=a, power=exhaustive_power(profile, a, scenario)))
    feasible = [p for p in plans if not validate_plan(scenario, p, profile=profile)]
    if not feasible:
        return plans[0]
    scores = [max_min_objective(p, scenario) for p in feasible]
    return feasible[int(np.argmax(scores))]


def run_algorithm1(scenario: Scenario, profile: HarvestProfile, params: Optional[ChannelParams] = None,
                   init: Optional[Plan] = None, eps_outer: float = OUTER_EPS, max_outer: int = OUTER_MAX_ITERS,
                   optimize_trajectory: bool = True, optimize_power: bool = True,
                   inner_tol: float = INNER_TOL, inner_max_iters: int = INNER_MAX_ITERS,
                   settings: Optional[BarrierSettings] = None, weight: float = SUM_RATE_WEIGHT,
                   verbose: bool = False) -> SolveOutcome:
    """关联 → 航迹 SCA → 功率 SCA 交替，直到外层相对增益 < eps_outer"""
    profile = profile.for_nodes(scenario.num_nodes)
    timings = {'association': 0.0, 'trajectory': 0.0, 'power': 0.0}
    start = time.time()
    plan = init if init is not None else initial_plan(scenario, profile, fixed_trajectory=not optimize_trajectory)
    problems = validate_plan(scenario, plan, profile=profile)
    if problems:
        return SolveOutcome(plan=plan, objective_trace=[max_min_objective(plan, scenario, params)],
                            inner_traces=[], status='infeasible', message=f"初始计划不可行: {problems[0]}")
    f = max_min_objective(plan, scenario, params)
    trace = [f]
    stages = [(0, 'init', f)]
    inner = []
    status = 'iteration-cap'
    message = ''
    if verbose:
        print(f"[SCA] 初始目标 {f:.6g} bits/s (M={scenario.num_uavs}, K={scenario.num_nodes}, N={scenario.num_slots})")

    for outer in range(1, max_outer + 1):
        f_start = f
        try:
            t0 = time.time()
            plan, f = association_step(plan, profile, scenario, params, optimize_trajectory, optimize_power,
                                       weight, settings, verbose)
            timings['association'] += time.time() - t0
            stages.append((outer, 'association', f))

            if optimize_trajectory:
                t0 = time.time()
                res = solve_trajectory_sca(plan.association, plan.power, plan.waypoints, scenario, params,
                                           inner_tol, inner_max_iters, settings, weight, verbose)
                timings['trajectory'] += time.time() - t0
                plan, f = res.plan, res.trace[-1]
                inner.append({'outer': outer, 'stage': 'trajectory', 'trace': res.trace, 'status': res.status})
                stages.append((outer, 'trajectory', f))

            if optimize_power:
                t0 = time.time()
                res = solve_power_sca(plan.association, plan.waypoints, plan.power, scenario, profile, params,
                                      inner_tol, inner_max_iters, settings, weight, verbose)
                timings['power'] += time.time() - t0
                plan, f = res.plan, res.trace[-1]
                inner.append({'outer': outer, 'stage': 'power', 'trace': res.trace, 'status': res.status})
                stages.append((outer, 'power', f))
        except (InfeasibleProblemError, InfeasibleLinearizationError) as exc:
            status, message = 'infeasible', str(exc)
            if verbose:
                print(f"[SCA] ❌ 第 {outer} 轮子问题不可行: {exc}")
            if f != trace[-1]:
                trace.append(f)   # 本轮已接受的阶段
            break
        except SolverFailure as exc:
            status, message = 'solver-failure', str(exc)
            if verbose:
                print(f"[SCA] ❌ 第 {outer} 轮求解失败: {exc}")
            if f != trace[-1]:
                trace.append(f)   # 本轮已接受的阶段
            break

        trace.append(f)
        if verbose:
            print(f"[SCA] 第 {outer} 轮: {f_start:.6g} → {f:.6g}")
        if f - f_start < eps_outer * max(abs(f_start), 1e-12):
            status = 'converged'
            break

    timings['total'] = time.time() - start
    if verbose:
        mark = '✅' if status == 'converged' else '❌'
        print(f"[SCA] {mark} {status}，{len(trace) - 1} 轮，最差速率 {f:.6g} bits/s，用时 {timings['total']:.1f}s")
    return SolveOutcome(plan=plan, objective_trace=trace, inner_traces=inner, status=status,
                        stage_trace=stages, timings=timings, message=message)

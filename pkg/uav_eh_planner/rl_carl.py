#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
在线阶段：飞行走廊约束的表格 Q-learning (CARL) 与传统 RL 基线

- 位置离散到边长 Δ 的方格中心；CARL 只允许进入离线最优航迹 q*[n] 周围 D_F 内的格子
- 动作：每架 UAV 选飞行方向 (0 悬停, 1 −x, 2 +x, 3 +y, 4 −y) 或通信动作 a_C = k·N_p + p（悬停时）
- 信道状态：CARL 用相对量化（瞬时 H 与 H̄ ± ε_H 比较），传统 RL 用绝对门限 [−100, −90] dB
- 奖励中的速率为频谱效率 (bits/s/Hz)，统计量换回 bits/s
"""

import functools
import hashlib
import itertools
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, asdict, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from channel import ChannelParams, FadingDraw, average_gain, draw_fading, linear_to_db, realize_gains
from energy import HarvestProfile, HARVEST_REL_STD, sample_harvest
from rate import slot_rate
from scenario import Scenario, Plan

LATTICE_PITCH = 60.0           # m
CORRIDOR_WIDTH = 90.0          # D_F, m
NUM_POWER_LEVELS = 4           # N_p
ENERGY_UNIT_FRACTION = 1.0 / 20.0   # E_p = B_max / 20
CHANNEL_MARGIN_DB = 5.0        # ε_H
PENALTY = -1e3                 # C_P
GAMMA = 0.5
LR_SCHEDULE = (0.9, 0.3)
EPS_SCHEDULE = (0.9, 0.1)
CONVENTIONAL_THRESHOLDS_DB = (-100.0, -90.0)
DISTANCE_COEF = 1e-4           # μ_n = 1e-4·n
LEGAL_CACHE_SIZE = 4096        # 合法动作缓存条目上限
REWARD_KINDS = ('WASR', 'DWASR', 'ISR')

# 飞行方向 → 格坐标增量
MOVES = ((0, 0), (-1, 0), (1, 0), (0, 1), (0, -1))

Cell = Tuple[int, int]
UavAction = Tuple[int, int]            # (a_F, a_C)
JointAction = Tuple[UavAction, ...]


class CorridorError(ValueError):
    """某时隙走廊内没有任何格子"""


class IllegalActionError(ValueError):
    """动作不在当前状态的合法动作集中"""


# -----------------------
# 格点
# -----------------------
@dataclass(frozen=True)
class Lattice:
    pitch: float = LATTICE_PITCH
    size: int = 10

    @classmethod
    def for_scenario(cls, scenario: Scenario, pitch: float = LATTICE_PITCH) -> 'Lattice':
        return cls(pitch=pitch, size=int(math.ceil(scenario.area_size / pitch - 1e-9)))

    def cell_of(self, xy) -> Cell:
        c = np.clip(np.floor(np.asarray(xy, dtype=float) / self.pitch), 0, self.size - 1).astype(int)
        return int(c[0]), int(c[1])

    def center(self, cell) -> np.ndarray:
        return self.pitch * np.asarray(cell, dtype=float) + self.pitch / 2.0

    def contains(self, cell) -> bool:
        return 0 <= cell[0] < self.size and 0 <= cell[1] < self.size

    def cells(self) -> List[Cell]:
        return [(x, y) for x in range(self.size) for y in range(self.size)]


def build_corridor(offline_waypoints, lattice: Lattice, d_f: float = CORRIDOR_WIDTH,
                   verbose: bool = False) -> List[List[FrozenSet[Cell]]]:
    """corridor[m][n]：格中心到 q*_m[n] 距离 ≤ d_f 的格子集合，n = 0..N"""
    q = np.asarray(offline_waypoints, dtype=float)
    if d_f <= lattice.pitch / math.sqrt(2.0) and verbose:
        print(f"[警告] D_F={d_f} ≤ Δ/√2={lattice.pitch / math.sqrt(2.0):.1f}，部分时隙走廊可能为空")
    cells = lattice.cells()
    centers = np.array([lattice.center(c) for c in cells])
    corridor = []
    for m in range(q.shape[0]):
        per_slot = []
        for n in range(q.shape[1]):
            dist = np.linalg.norm(centers - q[m, n], axis=1)
            inside = frozenset(cells[i] for i in np.nonzero(dist <= d_f + 1e-9)[0])
            if not inside:
                raise CorridorError(f"UAV {m} 时隙 {n} 走廊为空，请增大 D_F（当前 {d_f} m，Δ={lattice.pitch} m）")
            per_slot.append(inside)
        corridor.append(per_slot)
    return corridor


# -----------------------
# 超参数与状态
# -----------------------
@dataclass(frozen=True)
class CarlHyper:
    gamma: float = GAMMA
    lr: Tuple[float, float] = LR_SCHEDULE
    eps: Tuple[float, float] = EPS_SCHEDULE
    num_power_levels: int = NUM_POWER_LEVELS
    energy_unit: Optional[float] = None
    corridor_width: float = CORRIDOR_WIDTH
    lattice_pitch: float = LATTICE_PITCH
    channel_margin_db: float = CHANNEL_MARGIN_DB
    penalty: float = PENALTY
    reward_kind: str = 'ISR'
    battery_levels_in_state: bool = False
    harvest_rel_std: float = HARVEST_REL_STD
    deterministic: bool = False

    def __post_init__(self):
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"未知奖励类型 {self.reward_kind}，可选 {REWARD_KINDS}")
        if self.num_power_levels < 1:
            raise ValueError("N_p 至少为 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("γ 需在 [0, 1]")
        object.__setattr__(self, 'lr', tuple(self.lr))
        object.__setattr__(self, 'eps', tuple(self.eps))

    def unit(self, scenario: Scenario) -> float:
        return self.energy_unit if self.energy_unit is not None else scenario.battery_capacity * ENERGY_UNIT_FRACTION

    def with_overrides(self, **changes) -> 'CarlHyper':
        doc = asdict(self)
        doc.update(changes)
        return CarlHyper(**doc)


def decayed(schedule: Tuple[float, float], step: int, total: int) -> float:
    """(hi − lo)·max((N_e − step)/N_e, 0) + lo"""
    hi, lo = schedule
    return (hi - lo) * max((total - step) / max(total, 1), 0.0) + lo


@dataclass(frozen=True, eq=False)
class CarlState:
    cells: Tuple[Cell, ...]
    batteries: np.ndarray          # K, J
    symbols: Tuple[Tuple[int, ...], ...]
    n: int


@dataclass(frozen=True, eq=False)
class Episode:
    """一次信道 + 采集实现；fading 为 None 时使用平均信道"""
    harvest: HarvestProfile
    fading: Optional[FadingDraw] = None


def draw_episode(scenario: Scenario, profile: HarvestProfile, rng: Optional[np.random.Generator] = None,
                 deterministic: bool = False, harvest_rel_std: float = HARVEST_REL_STD) -> Episode:
    profile = profile.for_nodes(scenario.num_nodes)
    if deterministic:
        return Episode(harvest=profile)
    rng = rng if rng is not None else np.random.default_rng()
    harvest = sample_harvest(profile, harvest_rel_std, rng)
    fading = draw_fading(rng, scenario.num_uavs, scenario.num_nodes, scenario.num_slots)
    return Episode(harvest=harvest, fading=fading)


def relative_channel_symbols(gains, avg_gains, margin_db: float = CHANNEL_MARGIN_DB) -> np.ndarray:
    """H < H̄ − ε → 0；H > H̄ + ε → 2；否则 1"""
    delta = linear_to_db(np.asarray(gains, dtype=float)) - linear_to_db(np.asarray(avg_gains, dtype=float))
    return np.where(delta < -margin_db, 0, np.where(delta > margin_db, 2, 1)).astype(int)


def absolute_channel_symbols(gains, thresholds_db=CONVENTIONAL_THRESHOLDS_DB) -> np.ndarray:
    g = linear_to_db(np.asarray(gains, dtype=float))
    lo, hi = thresholds_db
    return np.where(g < lo, 0, np.where(g > hi, 2, 1)).astype(int)


# -----------------------
# 合法动作、奖励
# -----------------------
def legal_actions(cells: Sequence[Cell], corridor_next: Sequence[Optional[FrozenSet[Cell]]], batteries,
                  lattice: Lattice, num_power_levels: int, energy_unit: float) -> List[JointAction]:
    """Â_F × Ā_C：下一格须在走廊内且两两不同；通信功率 p·E_p ≤ b_k，不同 UAV 不选同一节点"""
    b = np.asarray(batteries, dtype=float)
    K = b.size
    levels = np.minimum(np.floor(b / energy_unit + 1e-9), num_power_levels).astype(int)
    per_uav = []
    for m, cell in enumerate(cells):
        allowed = corridor_next[m]
        options = []
        if allowed is None or cell in allowed:
            options.append(((0, 0), cell))
            for k in range(K):
                for p in range(1, levels[k] + 1):
                    options.append(((0, k * num_power_levels + p), cell))
        for f in range(1, 5):
            nxt = (cell[0] + MOVES[f][0], cell[1] + MOVES[f][1])
            if lattice.contains(nxt) and (allowed is None or nxt in allowed):
                options.append(((f, 0), nxt))
        per_uav.append(options)

    joint = []
    for combo in itertools.product(*per_uav):
        nxt = [c for _, c in combo]
        if len(set(nxt)) < len(nxt):
            continue
        nodes = [(a_c - 1) // num_power_levels for (a_f, a_c), _ in combo if a_c > 0]
        if len(set(nodes)) < len(nodes):
            continue
        joint.append(tuple(a for a, _ in combo))
    return joint


def reward(kind: str, slot_se, accumulated, dead_end: bool = False, off_start: bool = False,
           penalty: float = PENALTY) -> float:
    """WASR = min(Z + R)；DWASR = min(Z + R) − min Z；ISR = mean(R)；走廊死路或未返航为 C_P"""
    if dead_end or off_start:
        return float(penalty)
    r = np.asarray(slot_se, dtype=float)
    z = np.asarray(accumulated, dtype=float)
    if kind == 'WASR':
        return float(np.min(z + r))
    if kind == 'DWASR':
        return float(np.min(z + r) - np.min(z))
    if kind == 'ISR':
        return float(np.mean(r))
    raise ValueError(f"未知奖励类型 {kind}")


def conventional_reward(slot_se, cells_next: Sequence[Cell], start_cells: Sequence[Cell], n: int,
                        off_start: bool = False, penalty: float = PENALTY, coef: float = DISTANCE_COEF) -> float:
    """mean(R) − μ_n·Σ_m ‖l_m^{n+1} − l_m^0‖，μ_n = coef·n；末时隙未返航为 C_P"""
    if off_start:
        return float(penalty)
    dist = sum(math.hypot(c[0] - s[0], c[1] - s[1]) for c, s in zip(cells_next, start_cells))
    return float(np.mean(np.asarray(slot_se, dtype=float)) - coef * n * dist)


# -----------------------
# 环境
# -----------------------
class CarlEnvironment:
    """CARL（给定走廊）或传统 RL（corridor=None，绝对信道量化，距离惩罚奖励）"""

    def __init__(self, scenario: Scenario, profile: HarvestProfile, hyper: Optional[CarlHyper] = None,
                 corridor=None, lattice: Optional[Lattice] = None, params: Optional[ChannelParams] = None,
                 reference_waypoints=None, legal_cache_size: int = LEGAL_CACHE_SIZE):
        self.scenario = scenario
        self.profile = profile.for_nodes(scenario.num_nodes)
        self.hyper = hyper or CarlHyper()
        self.lattice = lattice or Lattice.for_scenario(scenario, self.hyper.lattice_pitch)
        self.params = params or scenario.channel
        self.corridor = corridor
        self.reference = None if reference_waypoints is None else np.asarray(reference_waypoints, dtype=float)
        self.conventional = corridor is None
        self.energy_unit = self.hyper.unit(scenario)
        self.start_cells = tuple(self.lattice.cell_of(q) for q in scenario.uav_initials)
        self._legal_for = functools.lru_cache(maxsize=legal_cache_size)(self._legal_uncached)

    @classmethod
    def carl(cls, scenario: Scenario, offline_waypoints, profile: HarvestProfile,
             hyper: Optional[CarlHyper] = None, params: Optional[ChannelParams] = None,
             verbose: bool = False) -> 'CarlEnvironment':
        hyper = hyper or CarlHyper()
        lattice = Lattice.for_scenario(scenario, hyper.lattice_pitch)
        corridor = build_corridor(offline_waypoints, lattice, hyper.corridor_width, verbose)
        return cls(scenario, profile, hyper, corridor, lattice, params, offline_waypoints)

    @property
    def num_slots(self) -> int:
        return self.scenario.num_slots

    def positions(self, cells: Sequence[Cell]) -> np.ndarray:
        return np.array([self.lattice.center(c) for c in cells])

    def gains(self, cells: Sequence[Cell], n: int, episode: Episode) -> np.ndarray:
        pos = self.positions(cells)
        if episode.fading is None:
            return self.average_gains(cells)
        return realize_gains(episode.fading, pos, n, self.scenario, self.params)[0]

    def average_gains(self, cells: Sequence[Cell]) -> np.ndarray:
        pos = self.positions(cells)
        return average_gain(pos[:, None, :], self.scenario.node_positions[None, :, :], self.scenario, self.params)

    def symbols(self, cells: Sequence[Cell], n: int, episode: Episode) -> Tuple[Tuple[int, ...], ...]:
        g = self.gains(cells, n, episode)
        if self.conventional:
            sym = absolute_channel_symbols(g)
        else:
            sym = relative_channel_symbols(g, self.average_gains(cells), self.hyper.channel_margin_db)
        return tuple(tuple(int(v) for v in row) for row in sym)

    def reset(self, episode: Episode) -> CarlState:
        ext = episode.harvest.extended()
        battery = np.minimum(ext[:, 0], self.scenario.battery_capacity)
        return CarlState(cells=self.start_cells, batteries=battery,
                         symbols=self.symbols(self.start_cells, 0, episode), n=0)

    def key(self, state: CarlState) -> tuple:
        if self.hyper.battery_levels_in_state:
            levels = tuple(int(v) for v in np.minimum(np.floor(state.batteries / self.energy_unit + 1e-9),
                                                      self.hyper.num_power_levels))
            return state.cells, state.symbols, state.n, levels
        return state.cells, state.symbols, state.n

    def legal(self, state: CarlState) -> List[JointAction]:
        n = state.n
        if n >= self.num_slots:
            return []
        pmax = tuple(int(v) for v in np.minimum(np.floor(state.batteries / self.energy_unit + 1e-9),
                                                self.hyper.num_power_levels))
        return self._legal_for(tuple(state.cells), n, pmax)

    def _legal_uncached(self, cells: Tuple[Cell, ...], n: int, pmax: Tuple[int, ...]) -> List[JointAction]:
        nxt = [None if self.corridor is None else self.corridor[m][n + 1] for m in range(self.scenario.num_uavs)]
        return legal_actions(cells, nxt, np.asarray(pmax, dtype=float) * self.energy_unit, self.lattice,
                             self.hyper.num_power_levels, self.energy_unit)

    def legal_cache_info(self):
        return self._legal_for.cache_info()

    def step(self, state: CarlState, action: JointAction, episode: Episode):
        """返回 (下一状态, 各节点时隙速率 bits/s)"""
        if action not in self.legal(state):
            raise IllegalActionError(f"时隙 {state.n} 动作 {action} 不合法")
        sc = self.scenario
        K, Np = sc.num_nodes, self.hyper.num_power_levels
        n = state.n
        association = np.zeros((sc.num_uavs, K), dtype=np.int8)
        spend = np.zeros(K)
        next_cells = []
        for m, (a_f, a_c) in enumerate(action):
            cell = state.cells[m]
            next_cells.append((cell[0] + MOVES[a_f][0], cell[1] + MOVES[a_f][1]))
            if a_c > 0:
                k, p = (a_c - 1) // Np, (a_c - 1) % Np + 1
                association[m, k] = 1
                spend[k] = p * self.energy_unit
        gains = self.gains(state.cells, n, episode)
        rates = slot_rate(association, spend / sc.slot_seconds, gains, sc)
        ext = episode.harvest.extended()
        battery = np.minimum(state.batteries - spend + ext[:, n + 1], sc.battery_capacity)
        next_cells = tuple(next_cells)
        symbols = self.symbols(next_cells, n + 1, episode) if n + 1 < self.num_slots else ()
        return CarlState(cells=next_cells, batteries=battery, symbols=symbols, n=n + 1), rates

    def outside_corridor(self, state: CarlState) -> int:
        """与参考航迹距离超过 D_F 的 UAV 数（按格中心）"""
        if self.reference is None:
            return 0
        pos = self.positions(state.cells)
        dist = np.linalg.norm(pos - self.reference[:, state.n], axis=1)
        return int(np.sum(dist > self.hyper.corridor_width + 1e-9))


# -----------------------
# Q 表
# -----------------------
def _as_tuple(value):
    if isinstance(value, list):
        return tuple(_as_tuple(v) for v in value)
    return value


class QTable:
    """稀疏 Q 表：(状态键, 联合动作) → 值，未访问为 0"""

    def __init__(self, hyper: Optional[CarlHyper] = None, mode: str = 'carl'):
        self.hyper = hyper or CarlHyper()
        self.mode = mode
        self.values: Dict[tuple, float] = defaultdict(float)

    def __len__(self):
        return len(self.values)

    def get(self, key: tuple, action: JointAction) -> float:
        return self.values.get((key, action), 0.0)

    def best(self, key: tuple, actions: Sequence[JointAction]) -> Tuple[JointAction, float]:
        """最大值动作，平局取合法动作列表中靠前者"""
        best_a, best_v = actions[0], self.get(key, actions[0])
        for a in actions[1:]:
            v = self.get(key, a)
            if v > best_v:
                best_a, best_v = a, v
        return best_a, best_v

    def update(self, key: tuple, action: JointAction, target: float, lr: float):
        old = self.values[(key, action)]
        self.values[(key, action)] = old + lr * (target - old)

    def to_document(self) -> dict:
        return {
            'mode': self.mode,
            'hyper': asdict(self.hyper),
            'entries': [[list(map(_jsonable, key)), _jsonable(action), value]
                        for (key, action), value in self.values.items()],
        }

    def digest(self) -> str:
        text = json.dumps(self.to_document(), sort_keys=True)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    def save(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_document(), f)

    @classmethod
    def load(cls, path: str) -> 'QTable':
        with open(path, 'r', encoding='utf-8') as f:
            doc = json.load(f)
        table = cls(CarlHyper(**doc['hyper']), doc.get('mode', 'carl'))
        for key, action, value in doc['entries']:
            table.values[(_as_tuple(key), _as_tuple(action))] = float(value)
        return table


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    return value


# -----------------------
# 回合
# -----------------------
@dataclass
class EpisodeResult:
    total_reward: float
    success: bool
    worst_rate: float          # min_k Σ_n R_{k,n} (bits/s)
    accumulated: np.ndarray    # K, bits/s
    corridor_violations: int
    penalized: bool
    steps: int


def run_episode(env: CarlEnvironment, table: QTable, episode: Episode, eps: float = 0.0,
                lr: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> EpisodeResult:
    """ε-贪婪执行一回合；lr 不为 None 时按 Q-learning 更新"""
    hyper = env.hyper
    W = env.scenario.bandwidth
    N = env.num_slots
    K = env.scenario.num_nodes
    state = env.reset(episode)
    z = np.zeros(K)
    total = 0.0
    success = False
    penalized = False
    violations = 0
    steps = 0
    actions = env.legal(state)
    while actions:
        n = state.n
        key = env.key(state)
        if rng is not None and eps > 0 and rng.random() < eps:
            action = actions[int(rng.integers(len(actions)))]
        else:
            action, _ = table.best(key, actions)
        nxt, rates = env.step(state, action, episode)
        se = rates / W
        steps += 1
        terminal = n == N - 1
        next_actions = [] if terminal else env.legal(nxt)
        dead_end = not terminal and not next_actions
        off_start = terminal and nxt.cells != env.start_cells
        if env.conventional:
            r = conventional_reward(se, nxt.cells, env.start_cells, n, off_start, hyper.penalty)
            if dead_end:
                r = float(hyper.penalty)
        else:
            r = reward(hyper.reward_kind, se, z, dead_end, off_start, hyper.penalty)
        penalized = penalized or dead_end or off_start
        z = z + se
        total += r
        if lr is not None:
            if terminal or dead_end:
                table.update(key, action, r, lr)
            else:
                _, best_next = table.best(env.key(nxt), next_actions)
                table.update(key, action, r + hyper.gamma * best_next, lr)
        state = nxt
        if not penalized:
            violations += env.outside_corridor(state)
        if terminal:
            success = not off_start
        actions = next_actions
    return EpisodeResult(total_reward=total, success=success, worst_rate=float(np.min(z) * W),
                         accumulated=z * W, corridor_violations=violations, penalized=penalized, steps=steps)


def _train(env: CarlEnvironment, episodes: int, rng: np.random.Generator, label: str,
           verbose: bool = False) -> Tuple[QTable, pd.DataFrame]:
    hyper = env.hyper
    table = QTable(hyper, mode='conventional' if env.conventional else 'carl')
    rows = []
    for e in tqdm(range(episodes), desc=f'[{label}] 训练', disable=not verbose):
        lr = decayed(hyper.lr, e, episodes)
        eps = decayed(hyper.eps, e, episodes)
        episode = draw_episode(env.scenario, env.profile, rng, hyper.deterministic, hyper.harvest_rel_std)
        res = run_episode(env, table, episode, eps=eps, lr=lr, rng=rng)
        rows.append((e, res.total_reward, int(res.success), res.worst_rate))
    curves = pd.DataFrame(rows, columns=['episode', 'return', 'success', 'worst_rate'])
    if verbose:
        tail = curves.tail(max(1, episodes // 10))
        print(f"[{label}] ✅ {episodes} 回合，表项 {len(table)}，末 10% 成功率 {tail['success'].mean():.3f}")
    return table, curves


def train_carl(scenario: Scenario, offline_plan, profile: HarvestProfile, params: Optional[ChannelParams] = None,
               hyper: Optional[CarlHyper] = None, episodes: int = 10000,
               rng: Optional[np.random.Generator] = None, verbose: bool = False):
    """走廊约束的 Q-learning；返回 (QTable, 学习曲线, 环境)"""
    waypoints = offline_plan.waypoints if isinstance(offline_plan, Plan) else offline_plan
    env = CarlEnvironment.carl(scenario, waypoints, profile, hyper, params, verbose)
    rng = rng if rng is not None else np.random.default_rng()
    table, curves = _train(env, episodes, rng, 'CARL', verbose)
    return table, curves, env


def train_conventional(scenario: Scenario, profile: HarvestProfile, params: Optional[ChannelParams] = None,
                       hyper: Optional[CarlHyper] = None, episodes: int = 10000,
                       rng: Optional[np.random.Generator] = None, verbose: bool = False):
    """全格点状态、绝对信道量化、返航距离惩罚的 Q-learning；返回 (QTable, 学习曲线, 环境)"""
    env = CarlEnvironment(scenario, profile, hyper, corridor=None, params=params)
    rng = rng if rng is not None else np.random.default_rng()
    table, curves = _train(env, episodes, rng, 'RL', verbose)
    return table, curves, env


@dataclass
class RolloutStats:
    mean_worst_rate: float
    ci_halfwidth: float
    success_probability: float
    corridor_violations: int
    worst_rates: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            'mean_worst_rate': self.mean_worst_rate,
            'ci95': self.ci_halfwidth,
            'success_probability': self.success_probability,
            'corridor_violations': self.corridor_violations,
            'rollouts': int(self.worst_rates.size),
        }


def rollout_policy(table: QTable, env: CarlEnvironment, num_rollouts: int,
                   rng: Optional[np.random.Generator] = None, episodes: Optional[Sequence[Episode]] = None,
                   verbose: bool = False) -> RolloutStats:
    """贪婪策略在新的信道/采集实现上的统计；episodes 给定时复用同一批实现"""
    rng = rng if rng is not None else np.random.default_rng()
    if episodes is None:
        episodes = (draw_episode(env.scenario, env.profile, rng, env.hyper.deterministic, env.hyper.harvest_rel_std)
                    for _ in range(num_rollouts))
    worst, success, violations = [], [], 0
    for episode in tqdm(episodes, total=num_rollouts, desc='[评估] 回放', disable=not verbose):
        res = run_episode(env, table, episode)
        worst.append(res.worst_rate)
        success.append(res.success)
        violations += res.corridor_violations
    w = np.array(worst)
    ci = 1.96 * float(np.std(w, ddof=1)) / math.sqrt(w.size) if w.size > 1 else 0.0
    return RolloutStats(mean_worst_rate=float(w.mean()) if w.size else 0.0, ci_halfwidth=ci,
                        success_probability=float(np.mean(success)) if success else 0.0,
                        corridor_violations=violations, worst_rates=w)


def save_curves(curves: pd.DataFrame, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    curves.to_csv(path, index=False)

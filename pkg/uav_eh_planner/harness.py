#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验编排与命令行入口

  python harness.py solve-offline --scenario configs/scenario_default.json --profile synthetic:bell:800 --seed 0 1
  python harness.py baseline --kind UC --out results
  python harness.py train-carl --episodes 200000 --quick
  python harness.py train-rl --episodes 200000
  python harness.py evaluate --plan results/offline/seed_0 --rollouts 1000
  python harness.py compare results/offline results/UC results/CARL --out results/compare
  python harness.py run configs/experiment_offline.json --workers 0

每个种子一个目录 <out>/<name>/seed_<s>/；汇总表 summary.csv / summary.json 不含耗时，
同一份 spec 重跑结果逐字节一致。任一种子失败时退出码为 1。
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import argparse
import json
import math
import multiprocessing as mp
import random
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from baselines import HeuristicKind, circle_tour, heuristic_plan, heuristic_trajectory
from channel import realization_along
from energy import HarvestProfile, load_profile
from rate import average_report, replay_plan
from rl_carl import (CarlEnvironment, CarlHyper, QTable, draw_episode, rollout_policy, run_episode,
                     save_curves, train_carl, train_conventional)
from scenario import Scenario, Plan, load_scenario, load_plan, save_plan, save_scenario
from sca_offline import run_algorithm1

# 尝试导入 psutil 用于内存监控
try:
    import psutil
    HAS_PSUTIL = True
except ImportError:
    HAS_PSUTIL = False
    print("[警告] psutil 未安装，无法自动调整进程数。建议安装: pip install psutil")

PLAN_METHODS = ('offline', 'OA', 'AFT', 'APC')
HEURISTIC_METHODS = tuple(k.value for k in HeuristicKind)
RL_METHODS = ('CARL', 'RL')
METHODS = PLAN_METHODS + HEURISTIC_METHODS + RL_METHODS

# 部分优化变体：(优化航迹, 优化功率)
VARIANT_SWITCHES = {
    'offline': (True, True),
    'OA': (False, False),
    'AFT': (True, False),
    'APC': (False, True),
}

DEFAULT_PROFILE = 'synthetic:bell:800'
DEFAULT_EPISODES = 200000
DEFAULT_ROLLOUTS = 1000
DEFAULT_BASE_SEED = 2024
MEM_PER_WORKER_MB = 400

QUICK_SLOT_FACTOR = 4
QUICK_MIN_SLOTS = 32
QUICK_EPISODE_FACTOR = 100
QUICK_ROLLOUT_FACTOR = 10

RANDOM_LAYOUT_MARGIN = 60.0

# 随机流编号
STREAM_LAYOUT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2

SUMMARY_COLUMNS = ['method', 'seed', 'status', 'worst_rate', 'eval_worst_rate', 'eval_ci',
                   'success_probability', 'iterations', 'solver_status', 'error']


class SpecError(ValueError):
    """实验 spec 字段缺失或取值非法"""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"[{field_name}] {message}")
        self.field = field_name


# -----------------------
# 工具函数 (Utils)
# -----------------------
def set_seed(seed=42):
    """设置随机种子以确保可重复性"""
    random.seed(seed)
    np.random.seed(seed)


def seed_rng(base_seed: int, run_seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([base_seed, run_seed, stream])


def get_adaptive_workers(num_jobs: int, mem_per_worker: float = MEM_PER_WORKER_MB) -> int:
    """
    根据可用内存和任务数自动计算进程数

    Args:
        num_jobs: 待运行的种子数
        mem_per_worker: 每进程估计内存 (MB)

    Returns:
        推荐的进程数
    """
    default_workers = max(1, min(num_jobs, mp.cpu_count() - 2))
    if not HAS_PSUTIL:
        return default_workers
    try:
        mem_info = psutil.virtual_memory()
        available_mem = mem_info.available / (1024 * 1024)
        total_mem = mem_info.total / (1024 * 1024)
        # 保留至少 2GB 或 20% 内存给系统
        reserved_mem = max(2000, total_mem * 0.2)
        usable_mem = max(0, available_mem - reserved_mem)
        adaptive_workers = min(max(1, int(usable_mem / mem_per_worker)), default_workers)
        if adaptive_workers < default_workers:
            print(f"    [内存自适应] 可用: {available_mem:.0f}MB, 每进程: {mem_per_worker:.0f}MB → "
                  f"使用 {adaptive_workers} 进程 (原 {default_workers})")
        return adaptive_workers
    except Exception:
        return default_workers


def _write_json(doc, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2, sort_keys=True, ensure_ascii=False)


# -----------------------
# 实验 spec
# -----------------------
@dataclass
class ExperimentSpec:
    method: str = 'offline'
    name: Optional[str] = None
    scenario: Union[str, dict, None] = None
    profile: str = DEFAULT_PROFILE
    seeds: List[int] = field(default_factory=lambda: [0])
    base_seed: int = DEFAULT_BASE_SEED
    out: str = 'results'
    episodes: int = DEFAULT_EPISODES
    rollouts: int = DEFAULT_ROLLOUTS
    offline_plan: Optional[str] = None
    corridor_source: str = 'offline'
    hyper: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    random_layout: bool = False
    workers: int = 1
    quick: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecError('method', f"未知方法 {self.method}，可选 {METHODS}")
        if self.name is None:
            self.name = self.method
        if not self.seeds:
            raise SpecError('seeds', "至少需要一个种子")
        if any(isinstance(s, bool) or not isinstance(s, int) for s in self.seeds):
            raise SpecError('seeds', f"种子必须为整数: {self.seeds}")
        if len(set(self.seeds)) != len(self.seeds):
            raise SpecError('seeds', f"种子重复: {self.seeds}")
        self.seeds = sorted(self.seeds)
        if self.corridor_source not in ('offline', 'UC'):
            raise SpecError('corridor_source', f"只支持 offline / UC，实际 {self.corridor_source}")
        if self.episodes < 1 or self.rollouts < 1:
            raise SpecError('episodes', "episodes / rollouts 必须为正")
        unknown = set(self.solver) - {'eps_outer', 'max_outer', 'inner_tol', 'inner_max_iters', 'weight'}
        if unknown:
            raise SpecError(f"solver.{sorted(unknown)[0]}", "未知求解器参数")
        try:
            CarlHyper(**self.hyper)
        except TypeError as e:
            raise SpecError('hyper', str(e))

    @property
    def effective_episodes(self) -> int:
        return max(1, self.episodes // QUICK_EPISODE_FACTOR) if self.quick else self.episodes

    @property
    def effective_rollouts(self) -> int:
        return max(1, self.rollouts // QUICK_ROLLOUT_FACTOR) if self.quick else self.rollouts

    @property
    def directory(self) -> str:
        return os.path.join(self.out, self.name)

    def to_document(self) -> dict:
        return asdict(self)


_SPEC_KEYS = set(ExperimentSpec.__dataclass_fields__)


def load_experiment_spec(source: Union[str, dict], **overrides) -> ExperimentSpec:
    """JSON 路径或字典 → ExperimentSpec；overrides 中非 None 的字段覆盖文档"""
    if isinstance(source, dict):
        doc = dict(source)
    else:
        with open(source, 'r', encoding='utf-8') as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise SpecError('<document>', f"JSON 解析失败: {e}")
        if isinstance(doc.get('scenario'), str) and not os.path.isabs(doc['scenario']) \
                and not doc['scenario'].lstrip().startswith('{'):
            # 相对路径以 spec 文件所在目录为基准
            candidate = os.path.join(os.path.dirname(os.path.abspath(source)), doc['scenario'])
            if os.path.exists(candidate):
                doc['scenario'] = candidate
    unknown = set(doc) - _SPEC_KEYS
    if unknown:
        raise SpecError(sorted(unknown)[0], "未知 spec 字段")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**doc)


def build_scenario(spec: ExperimentSpec, seed: int) -> Scenario:
    """加载场景；--quick 缩短时隙数（δ 不变）；random_layout 时按种子重抽节点位置"""
    scenario = load_scenario(spec.scenario)
    if spec.quick:
        delta = scenario.slot_seconds
        n_quick = max(scenario.num_slots // QUICK_SLOT_FACTOR, QUICK_MIN_SLOTS)
        n_quick = min(n_quick, scenario.num_slots)
        scenario = scenario.with_overrides(num_slots=n_quick, horizon_seconds=delta * n_quick)
    if spec.random_layout:
        rng = seed_rng(spec.base_seed, seed, STREAM_LAYOUT)
        lo, hi = RANDOM_LAYOUT_MARGIN, scenario.area_size - RANDOM_LAYOUT_MARGIN
        nodes = rng.uniform(lo, hi, size=(scenario.num_nodes, 2))
        scenario = scenario.with_overrides(node_positions=nodes)
    return scenario


def evaluation_episodes(scenario: Scenario, profile: HarvestProfile, count: int, rng: np.random.Generator,
                        rel_std: float):
    return [draw_episode(scenario, profile, rng, harvest_rel_std=rel_std) for _ in range(count)]


def evaluate_plan_online(plan: Plan, scenario: Scenario, episodes) -> dict:
    """固定计划在共同随机数实现上的回放统计"""
    worst = []
    for ep in episodes:
        realization = realization_along(ep.fading, plan.waypoints, scenario)
        report, _ = replay_plan(plan, realization, ep.harvest, scenario)
        worst.append(report.worst)
    w = np.array(worst)
    ci = 1.96 * float(np.std(w, ddof=1)) / math.sqrt(w.size) if w.size > 1 else 0.0
    return {'eval_worst_rate': float(w.mean()), 'eval_ci': ci, 'success_probability': 1.0}


# -----------------------
# 单种子任务
# -----------------------
def _solver_kwargs(spec: ExperimentSpec) -> dict:
    return dict(spec.solver)


def _run_plan_method(spec: ExperimentSpec, scenario: Scenario, profile: HarvestProfile, seed_dir: str,
                     verbose: bool) -> Tuple[dict, Plan]:
    if spec.method in PLAN_METHODS:
        traj, power = VARIANT_SWITCHES[spec.method]
        outcome = run_algorithm1(scenario, profile, optimize_trajectory=traj, optimize_power=power,
                                 verbose=verbose, **_solver_kwargs(spec))
        outcome.save(seed_dir)
        plan = outcome.plan
        result = {'worst_rate': outcome.objective, 'iterations': outcome.iterations,
                  'solver_status': outcome.status}
        if outcome.status not in ('converged', 'iteration-cap'):
            result['status'] = 'failed'
            result['error'] = f"{outcome.status}: {outcome.message}"
    else:
        plan = heuristic_plan(spec.method, scenario, profile)
        save_plan(plan, seed_dir)
        result = {'worst_rate': average_report(plan, scenario).worst, 'iterations': 0, 'solver_status': 'n/a'}
    average_report(plan, scenario).to_csv(os.path.join(seed_dir, 'rates.csv'))
    return result, plan


def _reference_waypoints(spec: ExperimentSpec, scenario: Scenario, profile: HarvestProfile, seed_dir: str,
                         verbose: bool):
    if spec.corridor_source == 'UC':
        return heuristic_trajectory('UC', scenario) if scenario.num_uavs == 2 else circle_tour(scenario)
    if spec.offline_plan:
        return load_plan(spec.offline_plan, scenario).waypoints
    outcome = run_algorithm1(scenario, profile, verbose=verbose, **_solver_kwargs(spec))
    outcome.save(os.path.join(seed_dir, 'offline'))
    if outcome.status not in ('converged', 'iteration-cap'):
        raise RuntimeError(f"离线求解失败 ({outcome.status}): {outcome.message}")
    return outcome.plan.waypoints


def _run_rl_method(spec: ExperimentSpec, scenario: Scenario, profile: HarvestProfile, seed_dir: str,
                   seed: int, verbose: bool) -> tuple:
    hyper = CarlHyper(**spec.hyper)
    rng = seed_rng(spec.base_seed, seed, STREAM_TRAIN)
    if spec.method == 'CARL':
        reference = _reference_waypoints(spec, scenario, profile, seed_dir, verbose)
        np.save(os.path.join(seed_dir, 'reference_waypoints.npy'), reference)
        table, curves, env = train_carl(scenario, reference, profile, hyper=hyper,
                                        episodes=spec.effective_episodes, rng=rng, verbose=verbose)
    else:
        table, curves, env = train_conventional(scenario, profile, hyper=hyper,
                                                episodes=spec.effective_episodes, rng=rng, verbose=verbose)
    table.save(os.path.join(seed_dir, 'qtable.json'))
    save_curves(curves, os.path.join(seed_dir, 'curves.csv'))
    average = run_episode(env, table, draw_episode(scenario, profile, deterministic=True))
    return {'worst_rate': average.worst_rate, 'iterations': spec.effective_episodes, 'solver_status': 'n/a'}, env, table


def run_seed(spec_doc: dict, seed: int, verbose: bool = False) -> dict:
    """一个种子的完整流程；异常记录在结果中，不向外抛出"""
    spec = ExperimentSpec(**spec_doc)
    set_seed(seed)
    seed_dir = os.path.join(spec.directory, f'seed_{seed}')
    os.makedirs(seed_dir, exist_ok=True)
    result = {k: None for k in SUMMARY_COLUMNS}
    result.update({'method': spec.method, 'seed': seed, 'status': 'ok', 'error': ''})
    start = time.time()
    try:
        scenario = build_scenario(spec, seed)
        save_scenario(scenario, os.path.join(seed_dir, 'scenario.json'))
        profile = load_profile(spec.profile, scenario).for_nodes(scenario.num_nodes)
        eval_rng = seed_rng(spec.base_seed, seed, STREAM_EVAL)
        rel_std = CarlHyper(**spec.hyper).harvest_rel_std
        episodes = evaluation_episodes(scenario, profile, spec.effective_rollouts, eval_rng, rel_std)
        if spec.method in RL_METHODS:
            metrics, env, table = _run_rl_method(spec, scenario, profile, seed_dir, seed, verbose)
            stats = rollout_policy(table, env, len(episodes), episodes=episodes, verbose=verbose)
            _write_json(stats.to_dict(), os.path.join(seed_dir, 'evaluation.json'))
            metrics.update({'eval_worst_rate': stats.mean_worst_rate, 'eval_ci': stats.ci_halfwidth,
                            'success_probability': stats.success_probability})
        else:
            metrics, plan = _run_plan_method(spec, scenario, profile, seed_dir, verbose)
            metrics.update(evaluate_plan_online(plan, scenario, episodes))
        result.update(metrics)
    except Exception as e:
        result['status'] = 'failed'
        result['error'] = f"{type(e).__name__}: {e}"
        with open(os.path.join(seed_dir, 'error.txt'), 'w', encoding='utf-8') as f:
            f.write(traceback.format_exc())
    with open(os.path.join(seed_dir, 'timing.json'), 'w', encoding='utf-8') as f:
        json.dump({'seconds': time.time() - start}, f)
    return result


# -----------------------
# 实验 / 对比
# -----------------------
def summary_frame(results: Sequence[dict]) -> pd.DataFrame:
    frame = pd.DataFrame(list(results), columns=SUMMARY_COLUMNS)
    return frame.sort_values('seed').reset_index(drop=True)


def write_summary(frame: pd.DataFrame, directory: str):
    frame.to_csv(os.path.join(directory, 'summary.csv'), index=False, float_format='%.10g')
    records = json.loads(frame.to_json(orient='records', double_precision=10))
    _write_json(records, os.path.join(directory, 'summary.json'))


def run_experiment(spec: ExperimentSpec, verbose: bool = False) -> pd.DataFrame:
    """按种子分发（进程池或内联），写出 spec.json 与汇总表"""
    os.makedirs(spec.directory, exist_ok=True)
    _write_json(spec.to_document(), os.path.join(spec.directory, 'spec.json'))
    workers = spec.workers if spec.workers > 0 else get_adaptive_workers(len(spec.seeds))
    workers = min(workers, len(spec.seeds))
    if verbose:
        print(f"\n{'=' * 60}")
        print(f"【实验】{spec.name} | 方法 {spec.method} | 种子 {spec.seeds} | 进程 {workers}"
              f"{' | quick' if spec.quick else ''}")
        print(f"{'=' * 60}")

    doc = spec.to_document()
    results = []
    if workers <= 1:
        for seed in spec.seeds:
            res = run_seed(doc, seed, verbose)
            results.append(res)
            if verbose:
                _report(res)
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run_seed, doc, seed, False): seed for seed in spec.seeds}
            for future in tqdm(as_completed(futures), total=len(futures), desc='[实验] 种子', disable=not verbose):
                seed = futures[future]
                try:
                    res = future.result()
                except Exception as e:
                    res = {k: None for k in SUMMARY_COLUMNS}
                    res.update({'method': spec.method, 'seed': seed, 'status': 'failed',
                                'error': f"{type(e).__name__}: {e}"})
                results.append(res)
                if verbose:
                    _report(res)

    frame = summary_frame(results)
    write_summary(frame, spec.directory)
    if verbose:
        ok = int((frame['status'] == 'ok').sum())
        print(f"\n[实验] 完成: {ok}/{len(frame)} 成功 → {spec.directory}")
    return frame


def _report(res: dict):
    if res['status'] == 'ok':
        print(f"  ✅ seed={res['seed']} worst={res['worst_rate']:.6g} eval={res['eval_worst_rate']:.6g} "
              f"success={res['success_probability']:.3f}")
    else:
        print(f"  ❌ seed={res['seed']} {res['error']}")


def _load_bundle(bundle) -> pd.DataFrame:
    if isinstance(bundle, pd.DataFrame):
        return bundle
    path = bundle if bundle.endswith('.csv') else os.path.join(bundle, 'summary.csv')
    return pd.read_csv(path, keep_default_na=False, na_values=[''])


def compare_methods(bundles: Sequence, out: Optional[str] = None) -> pd.DataFrame:
    """多个实验汇总表对齐种子后逐方法统计；种子集合不一致时报错"""
    frames = [_load_bundle(b) for b in bundles]
    if not frames:
        raise ValueError("至少需要一个实验结果")
    seed_sets = [sorted(int(s) for s in f['seed']) for f in frames]
    for f, seeds in zip(frames[1:], seed_sets[1:]):
        if seeds != seed_sets[0]:
            raise ValueError(f"种子集合不一致: {seed_sets[0]} vs {seeds} ({f['method'].iloc[0]})")
    data = pd.concat(frames, ignore_index=True)
    data['worst_rate'] = pd.to_numeric(data['worst_rate'], errors='coerce')
    data['eval_worst_rate'] = pd.to_numeric(data['eval_worst_rate'], errors='coerce')
    pivot = data.pivot_table(index='seed', columns='method', values='eval_worst_rate', aggfunc='first')
    best = pivot.idxmax(axis=1)
    rows = []
    for method in dict.fromkeys(data['method']):
        sub = data[data['method'] == method]
        rows.append({
            'method': method,
            'seeds': int(len(sub)),
            'ok': int((sub['status'] == 'ok').sum()),
            'worst_rate': float(sub['worst_rate'].mean()),
            'eval_worst_rate': float(sub['eval_worst_rate'].mean()),
            'success_probability': float(pd.to_numeric(sub['success_probability'], errors='coerce').mean()),
            'iterations': float(pd.to_numeric(sub['iterations'], errors='coerce').mean()),
            'best_fraction': float((best == method).mean()),
        })
    table = pd.DataFrame(rows)
    if out:
        os.makedirs(out, exist_ok=True)
        table.to_csv(os.path.join(out, 'compare.csv'), index=False, float_format='%.10g')
        _write_json(json.loads(table.to_json(orient='records', double_precision=10)),
                    os.path.join(out, 'compare.json'))
    return table


# -----------------------
# evaluate 动词
# -----------------------
def evaluate_artifact(scenario: Scenario, profile: HarvestProfile, rollouts: int, seed: int,
                      plan_dir: Optional[str] = None, qtable_path: Optional[str] = None,
                      verbose: bool = False) -> dict:
    """回放已保存的计划或 Q 表；CARL 表需要 plan_dir 给出走廊参考航迹"""
    rng = seed_rng(DEFAULT_BASE_SEED, seed, STREAM_EVAL)
    if qtable_path:
        table = QTable.load(qtable_path)
        episodes = evaluation_episodes(scenario, profile, rollouts, rng, table.hyper.harvest_rel_std)
        if table.mode == 'carl':
            if not plan_dir:
                raise SpecError('plan', "CARL Q 表需要 --plan 指定走廊参考计划")
            env = CarlEnvironment.carl(scenario, load_plan(plan_dir, scenario).waypoints, profile, table.hyper)
        else:
            env = CarlEnvironment(scenario, profile, table.hyper)
        stats = rollout_policy(table, env, rollouts, episodes=episodes, verbose=verbose)
        return stats.to_dict()
    if not plan_dir:
        raise SpecError('plan', "需要 --plan 或 --qtable")
    plan = load_plan(plan_dir, scenario)
    episodes = evaluation_episodes(scenario, profile, rollouts, rng, CarlHyper().harvest_rel_std)
    doc = evaluate_plan_online(plan, scenario, episodes)
    doc['worst_rate'] = average_report(plan, scenario).worst
    doc['rollouts'] = rollouts
    return doc


# -----------------------
# 命令行
# -----------------------
def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--scenario', type=str, default=None, help="场景 JSON（路径或内联文本，缺省为默认场景）")
    parser.add_argument('--profile', type=str, default=None, help="采集剖面：synthetic:<kind>:<peak> 或辐照度 CSV")
    parser.add_argument('--seed', type=int, nargs='+', default=None, help="随机种子（可多个）")
    parser.add_argument('--out', type=str, default=None, help="输出根目录")
    parser.add_argument('--workers', type=int, default=None, help="并行进程数(0=自动检测)")
    parser.add_argument('--quick', action='store_true', help="缩小 N / N_e / 回放次数")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="太阳能供能无线节点的多 UAV 数据收集规划（离线 SCA + 在线 CARL）")
    sub = parser.add_subparsers(dest='verb', required=True)

    p = sub.add_parser('solve-offline', help="交替优化求解离线计划")
    _common(p)
    p.add_argument('--variant', type=str, default='offline', choices=PLAN_METHODS, help="OA/AFT/APC 为部分优化")

    p = sub.add_parser('baseline', help="启发式航线 + 最近关联 + 耗尽式功率")
    _common(p)
    p.add_argument('--kind', type=str, default='UC', choices=HEURISTIC_METHODS)

    for verb, text in (('train-carl', "走廊约束 Q-learning"), ('train-rl', "传统 Q-learning 基线")):
        p = sub.add_parser(verb, help=text)
        _common(p)
        p.add_argument('--episodes', type=int, default=None, help="训练回合数 N_e")
        p.add_argument('--rollouts', type=int, default=None, help="评估回放次数")
        p.add_argument('--reward', type=str, default=None, choices=['WASR', 'DWASR', 'ISR'])
        if verb == 'train-carl':
            p.add_argument('--offline-plan', type=str, default=None, help="已有离线计划目录（缺省时先求解）")
            p.add_argument('--corridor-source', type=str, default=None, choices=['offline', 'UC'])
            p.add_argument('--corridor-width', type=float, default=None, help="D_F (m)")

    p = sub.add_parser('evaluate', help="在随机信道/采集实现上回放计划或 Q 表")
    _common(p)
    p.add_argument('--plan', type=str, default=None, help="计划目录")
    p.add_argument('--qtable', type=str, default=None, help="Q 表 JSON")
    p.add_argument('--rollouts', type=int, default=DEFAULT_ROLLOUTS)

    p = sub.add_parser('compare', help="汇总多个实验目录")
    p.add_argument('bundles', nargs='+', help="实验目录或 summary.csv")
    p.add_argument('--out', type=str, default=None)

    p = sub.add_parser('run', help="按 spec JSON 运行实验")
    p.add_argument('spec', type=str)
    _common(p)
    return parser


def _spec_from_args(args, method: str) -> ExperimentSpec:
    doc = {'method': method}
    hyper = {}
    if getattr(args, 'reward', None):
        hyper['reward_kind'] = args.reward
    if getattr(args, 'corridor_width', None) is not None:
        hyper['corridor_width'] = args.corridor_width
    if hyper:
        doc['hyper'] = hyper
    for key, attr in (('scenario', 'scenario'), ('profile', 'profile'), ('seeds', 'seed'), ('out', 'out'),
                      ('workers', 'workers'), ('episodes', 'episodes'), ('rollouts', 'rollouts'),
                      ('offline_plan', 'offline_plan'), ('corridor_source', 'corridor_source')):
        value = getattr(args, attr, None)
        if value is not None:
            doc[key] = value
    doc['quick'] = bool(args.quick)
    return ExperimentSpec(**doc)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == 'compare':
            table = compare_methods(args.bundles, args.out)
            print(table.to_string(index=False))
            return 0

        if args.verb == 'evaluate':
            scenario = load_scenario(args.scenario)
            profile = load_profile(args.profile or DEFAULT_PROFILE, scenario).for_nodes(scenario.num_nodes)
            seed = (args.seed or [0])[0]
            rollouts = max(1, args.rollouts // QUICK_ROLLOUT_FACTOR) if args.quick else args.rollouts
            doc = evaluate_artifact(scenario, profile, rollouts, seed, args.plan, args.qtable, verbose=True)
            print(json.dumps(doc, indent=2, ensure_ascii=False))
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                _write_json(doc, os.path.join(args.out, 'evaluation.json'))
            return 0

        if args.verb == 'run':
            spec = load_experiment_spec(args.spec, scenario=args.scenario, profile=args.profile, seeds=args.seed,
                                        out=args.out, workers=args.workers, quick=args.quick or None)
        elif args.verb == 'solve-offline':
            spec = _spec_from_args(args, args.variant)
        elif args.verb == 'baseline':
            spec = _spec_from_args(args, args.kind)
        elif args.verb == 'train-carl':
            spec = _spec_from_args(args, 'CARL')
        else:
            spec = _spec_from_args(args, 'RL')
    except (ValueError, OSError) as e:
        print(f"❌ {e}")
        return 1

    frame = run_experiment(spec, verbose=True)
    return 0 if bool((frame['status'] == 'ok').all()) else 1


if __name__ == '__main__':
    # 在 Windows 上必须使用 freeze_support
    mp.freeze_support()
    sys.exit(main())

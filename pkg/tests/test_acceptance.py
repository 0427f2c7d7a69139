# -*- coding: utf-8 -*-
"""桌面规模的端到端验收：离线求解 vs 启发式、单调性、部分优化变体、CARL 回放"""
import json
import os

import numpy as np
import pandas as pd
import pytest

from energy import synth_profile
from harness import ExperimentSpec, run_experiment, seed_rng
from rl_carl import CarlHyper, draw_episode, rollout_policy, train_carl, train_conventional
from scenario import default_scenario
from sca_offline import MONOTONE_TOL, run_algorithm1

pytestmark = pytest.mark.slow

DESK_SCENARIO = {'num_nodes': 3, 'num_slots': 40, 'horizon_seconds': 2400.0}
LAYOUT_SEEDS = list(range(20))


def _experiment(out, method, scenario, seeds):
    spec = ExperimentSpec(method=method, scenario=dict(scenario), seeds=list(seeds), random_layout=True,
                          rollouts=1, workers=0, out=str(out))
    frame = run_experiment(spec)
    assert (frame['status'] == 'ok').all(), frame.loc[frame['status'] != 'ok', 'error'].tolist()
    return spec, frame.set_index('seed')


@pytest.fixture(scope='module')
def desk_runs(tmp_path_factory):
    """K=3、N=40 随机布点：离线求解与三种启发式航线"""
    out = tmp_path_factory.mktemp('desk')
    runs = {}
    for method in ('offline', 'UC', 'CC', 'SLC'):
        runs[method] = _experiment(out, method, DESK_SCENARIO, LAYOUT_SEEDS)
    return runs


def _assert_nondecreasing(values, label):
    for a, b in zip(values, values[1:]):
        assert b >= a - MONOTONE_TOL * max(1.0, abs(a)), f"{label}: {a} → {b}"


def _check_traces(spec, seeds):
    for seed in seeds:
        seed_dir = os.path.join(spec.directory, f'seed_{seed}')
        stages = pd.read_csv(os.path.join(seed_dir, 'stages.csv'))
        _assert_nondecreasing(stages['objective'].tolist(), f'seed {seed} 外层')
        with open(os.path.join(seed_dir, 'trace.json'), 'r', encoding='utf-8') as f:
            doc = json.load(f)
        _assert_nondecreasing(doc['objective_trace'], f'seed {seed} 目标')
        for inner in doc['inner_traces']:
            _assert_nondecreasing(inner['trace'], f"seed {seed} 第 {inner['outer']} 轮 {inner['stage']}")


def test_offline_beats_best_heuristic(desk_runs):
    offline = desk_runs['offline'][1]['worst_rate']
    best = pd.concat([desk_runs[k][1]['worst_rate'] for k in ('UC', 'CC', 'SLC')], axis=1).max(axis=1)
    wins = (offline >= best * (1.0 - 1e-9)).mean()
    assert wins >= 0.8
    assert offline.mean() >= 1.10 * best.mean()


def test_offline_traces_are_monotone(desk_runs, tmp_path):
    spec, frame = desk_runs['offline']
    _check_traces(spec, LAYOUT_SEEDS[:10])
    assert set(frame.loc[LAYOUT_SEEDS[:10], 'solver_status']) <= {'converged', 'iteration-cap'}

    two_nodes = dict(DESK_SCENARIO, num_nodes=2)
    spec2, frame2 = _experiment(tmp_path, 'offline', two_nodes, range(10))
    _check_traces(spec2, range(10))
    assert (frame2['iterations'] <= 6).all()


def test_partial_variants_do_not_beat_joint_optimization(desk_runs, tmp_path):
    seeds = LAYOUT_SEEDS[:4]
    joint = desk_runs['offline'][1].loc[seeds, 'worst_rate'].mean()
    means = {}
    for method in ('OA', 'AFT', 'APC'):
        means[method] = _experiment(tmp_path, method, DESK_SCENARIO, seeds)[1]['worst_rate'].mean()
        assert joint >= means[method] * (1.0 - 1e-9)
    # 航迹或功率任一额外优化都不应低于只优化关联
    assert means['AFT'] >= means['OA'] * (1.0 - 1e-9)
    assert means['APC'] >= means['OA'] * (1.0 - 1e-9)


# -----------------------
# CARL 回放
# -----------------------
def _stationary(scenario):
    return np.repeat(scenario.uav_initials[:, None, :], scenario.num_slots + 1, axis=1)


def test_carl_rollouts_stay_in_corridor_and_return():
    scenario = default_scenario(num_nodes=1, uav_initials=((30.0, 270.0),), num_slots=10, horizon_seconds=600.0)
    profile = synth_profile('bell', 800.0, scenario)
    hyper = CarlHyper(num_power_levels=2, corridor_width=90.0)
    table, _, env = train_carl(scenario, _stationary(scenario), profile, hyper=hyper, episodes=20000,
                               rng=np.random.default_rng(5))
    stats = rollout_policy(table, env, 10000, rng=np.random.default_rng(6))
    assert stats.success_probability >= 0.9
    assert stats.corridor_violations == 0


def test_carl_beats_conventional_rl():
    scenario = default_scenario(num_nodes=2, uav_initials=((30.0, 270.0),), num_slots=10, horizon_seconds=600.0)
    profile = synth_profile('bell', 800.0, scenario)
    offline = run_algorithm1(scenario, profile)
    assert offline.status in ('converged', 'iteration-cap')

    hyper = CarlHyper()
    carl, _, carl_env = train_carl(scenario, offline.plan, profile, hyper=hyper, episodes=20000,
                                   rng=seed_rng(2024, 0, 1))
    conv, _, conv_env = train_conventional(scenario, profile, hyper=hyper, episodes=20000,
                                           rng=seed_rng(2024, 0, 1))
    scores = {'CARL': [], 'RL': []}
    for seed in range(10):
        rng = seed_rng(2024, seed, 2)
        episodes = [draw_episode(scenario, profile, rng, harvest_rel_std=hyper.harvest_rel_std) for _ in range(200)]
        scores['CARL'].append(rollout_policy(carl, carl_env, len(episodes), episodes=episodes).mean_worst_rate)
        scores['RL'].append(rollout_policy(conv, conv_env, len(episodes), episodes=episodes).mean_worst_rate)
    assert np.mean(scores['CARL']) >= 1.05 * np.mean(scores['RL'])

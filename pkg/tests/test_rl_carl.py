# -*- coding: utf-8 -*-
import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import abundant_profile
from energy import synth_profile
from rl_carl import (CarlEnvironment, CarlHyper, CarlState, CorridorError, IllegalActionError, Lattice, QTable,
                     absolute_channel_symbols, build_corridor, conventional_reward, decayed, draw_episode,
                     legal_actions, relative_channel_symbols, reward, rollout_policy, run_episode,
                     train_carl, train_conventional)
from scenario import default_scenario


def _stationary(scenario):
    return np.repeat(scenario.uav_initials[:, None, :], scenario.num_slots + 1, axis=1)


@pytest.fixture
def pinned():
    """两架 UAV 起点在格中心，N=6"""
    return default_scenario(num_nodes=2, uav_initials=((30.0, 270.0), (570.0, 270.0)),
                            num_slots=6, horizon_seconds=360.0)


@pytest.fixture
def pinned_env(pinned):
    hyper = CarlHyper(corridor_width=10.0, reward_kind='DWASR')
    profile = synth_profile('constant', 800.0, pinned)
    return CarlEnvironment.carl(pinned, _stationary(pinned), profile, hyper)


def test_lattice_geometry(scenario):
    lat = Lattice.for_scenario(scenario)
    assert lat.size == 10
    assert lat.cell_of((65.0, 130.0)) == (1, 2)
    assert lat.cell_of((600.0, -5.0)) == (9, 0)
    assert_allclose(lat.center((1, 2)), [90.0, 150.0])
    assert lat.contains((9, 9)) and not lat.contains((10, 0))
    assert len(lat.cells()) == 100


def test_corridor_singleton_and_monotone():
    lat = Lattice(60.0, 10)
    q = np.full((1, 3, 2), 270.0)
    narrow = build_corridor(q, lat, 10.0)
    assert narrow[0][0] == frozenset({(4, 4)})
    wide = build_corridor(q, lat, 130.0)
    assert all(narrow[0][n] <= wide[0][n] for n in range(3))
    assert len(wide[0][1]) > 1


def test_empty_corridor_raises():
    q = np.full((1, 2, 2), 300.0)   # 四个格中心距离 42.4 m
    with pytest.raises(CorridorError):
        build_corridor(q, Lattice(60.0, 10), 10.0)
    assert len(build_corridor(q, Lattice(60.0, 10), 90.0)[0][0]) == 4


def test_empty_battery_disables_communication():
    acts = legal_actions([(2, 3)], [None], [0.0, 0.0], Lattice(60.0, 10), 2, 75.0)
    assert len(acts) == 5
    assert all(a_c == 0 for ((a_f, a_c),) in acts)


def test_joint_action_count_without_corridor():
    lat = Lattice(60.0, 10)
    full = [150.0, 150.0]
    # 每架 UAV 9 个选项，减去同选一个节点的 2×2×2 种
    assert len(legal_actions([(2, 2), (7, 7)], [None, None], full, lat, 2, 75.0)) == 73
    # 相邻两格相向移动会撞到同一格
    assert len(legal_actions([(2, 3), (4, 3)], [None, None], full, lat, 2, 75.0)) == 72


def test_power_levels_capped_by_battery():
    acts = legal_actions([(2, 2)], [None], [100.0], Lattice(60.0, 10), 4, 75.0)
    comm = [a_c for ((a_f, a_c),) in acts if a_c > 0]
    assert comm == [1]


def test_corridor_restricts_moves():
    lat = Lattice(60.0, 10)
    acts = legal_actions([(2, 2)], [frozenset({(3, 2)})], [0.0], lat, 2, 75.0)
    assert acts == [((2, 0),)]
    assert legal_actions([(2, 2)], [frozenset({(5, 5)})], [0.0], lat, 2, 75.0) == []


def test_step_moves_and_credits_battery(small_scenario, small_profile):
    env = CarlEnvironment(small_scenario, small_profile, CarlHyper(num_power_levels=2))
    episode = draw_episode(small_scenario, small_profile, deterministic=True)
    start = env.reset(episode)
    assert_allclose(start.batteries, [96.0, 96.0])
    state = CarlState(cells=((2, 3), (7, 7)), batteries=start.batteries,
                      symbols=env.symbols(((2, 3), (7, 7)), 0, episode), n=0)
    nxt, rates = env.step(state, ((2, 0), (0, 1)), episode)
    assert nxt.cells == ((3, 3), (7, 7))
    assert nxt.n == 1
    assert_allclose(nxt.batteries, [96.0 - 75.0 + 96.0, 192.0])
    assert rates[0] > 0.0 and rates[1] == 0.0
    with pytest.raises(IllegalActionError):
        env.step(state, ((0, 2), (0, 0)), episode)    # 功率 2 级超出电量


def test_channel_symbols():
    g = np.array([[1e-9, 2e-9]])
    assert np.all(relative_channel_symbols(g, g) == 1)
    assert relative_channel_symbols(g * 10.0, g).tolist() == [[2, 2]]
    assert relative_channel_symbols(g / 10.0, g).tolist() == [[0, 0]]
    assert absolute_channel_symbols([1e-11, 10 ** -9.5, 1e-8]).tolist() == [0, 1, 2]


def test_reward_shapes():
    z, r = [5.0, 7.0], [1.0, 0.0]
    assert reward('WASR', r, z) == pytest.approx(6.0)
    assert reward('DWASR', r, z) == pytest.approx(1.0)
    assert reward('ISR', r, z) == pytest.approx(0.5)
    assert reward('ISR', r, z, dead_end=True) == -1e3
    assert reward('WASR', r, z, off_start=True, penalty=-5.0) == -5.0
    with pytest.raises(ValueError):
        reward('SUM', r, z)


def test_conventional_reward():
    assert conventional_reward([1.0, 3.0], [(1, 0)], [(0, 0)], 10) == pytest.approx(2.0 - 1e-3)
    assert conventional_reward([1.0, 3.0], [(0, 0)], [(0, 0)], 10) == pytest.approx(2.0)
    assert conventional_reward([1.0, 3.0], [(0, 0)], [(0, 0)], 10, off_start=True) == -1e3


def test_decay_schedule():
    assert decayed((0.9, 0.1), 0, 10) == pytest.approx(0.9)
    assert decayed((0.9, 0.1), 5, 10) == pytest.approx(0.5)
    assert decayed((0.9, 0.1), 10, 10) == pytest.approx(0.1)
    assert decayed((0.9, 0.1), 50, 10) == pytest.approx(0.1)


def test_hyper_validation():
    with pytest.raises(ValueError):
        CarlHyper(reward_kind='MAX')
    with pytest.raises(ValueError):
        CarlHyper(gamma=1.5)
    h = CarlHyper().with_overrides(num_power_levels=2, lr=[0.5, 0.1])
    assert h.num_power_levels == 2 and h.lr == (0.5, 0.1)


def test_q_update_and_greedy_tie_break():
    table = QTable()
    a1, a2 = ((0, 0),), ((1, 0),)
    table.update('s', a1, 3.0, 1.0)
    assert table.get('s', a1) == 3.0
    table.update('s', a1, 1.0, 0.5)
    assert table.get('s', a1) == pytest.approx(2.0)
    assert table.best('t', [a2, a1]) == (a2, 0.0)
    assert table.best('s', [a2, a1]) == (a1, pytest.approx(2.0))


def test_qtable_save_load_digest(pinned, tmp_path, rng):
    table, curves, env = train_carl(pinned, _stationary(pinned), synth_profile('constant', 800.0, pinned),
                                    hyper=CarlHyper(corridor_width=10.0), episodes=20, rng=rng)
    assert len(table) > 0
    path = str(tmp_path / 'q.json')
    table.save(path)
    again = QTable.load(path)
    assert again.digest() == table.digest()
    assert again.hyper == table.hyper


def test_training_is_deterministic(pinned):
    profile = synth_profile('bell', 800.0, pinned)
    hyper = CarlHyper(corridor_width=10.0)
    t1, c1, _ = train_carl(pinned, _stationary(pinned), profile, hyper=hyper, episodes=15,
                           rng=np.random.default_rng(5))
    t2, c2, _ = train_carl(pinned, _stationary(pinned), profile, hyper=hyper, episodes=15,
                           rng=np.random.default_rng(5))
    assert t1.digest() == t2.digest()
    assert c1.equals(c2)
    assert list(c1.columns) == ['episode', 'return', 'success', 'worst_rate']


def test_dwasr_returns_telescope(pinned_env, rng):
    for _ in range(3):
        episode = draw_episode(pinned_env.scenario, pinned_env.profile, rng)
        res = run_episode(pinned_env, QTable(pinned_env.hyper), episode, eps=1.0, rng=rng)
        assert not res.penalized
        assert res.steps == pinned_env.num_slots
        assert res.total_reward == pytest.approx(res.worst_rate / pinned_env.scenario.bandwidth, rel=1e-9, abs=1e-12)


def test_pinned_policy_always_returns(pinned_env, rng):
    stats = rollout_policy(QTable(pinned_env.hyper), pinned_env, 5, rng)
    assert stats.success_probability == 1.0
    assert stats.corridor_violations == 0
    assert stats.worst_rates.shape == (5,)
    assert set(stats.to_dict()) == {'mean_worst_rate', 'ci95', 'success_probability', 'corridor_violations',
                                    'rollouts'}


def test_battery_levels_extend_state_key(pinned):
    profile = synth_profile('constant', 800.0, pinned)
    env = CarlEnvironment.carl(pinned, _stationary(pinned), profile,
                               CarlHyper(corridor_width=10.0, battery_levels_in_state=True))
    state = env.reset(draw_episode(pinned, profile, deterministic=True))
    key = env.key(state)
    assert len(key) == 4 and key[3] == (1, 1)


def test_conventional_training_runs(small_scenario, small_profile, rng):
    table, curves, env = train_conventional(small_scenario, small_profile, episodes=3, rng=rng)
    assert env.conventional and table.mode == 'conventional'
    assert len(curves) == 3
    assert env.start_cells == ((0, 5), (9, 5))


def _best_return(env, episode, state, z):
    """穷举全部合法动作序列的最大回报（与 run_episode 相同的奖励口径）"""
    N = env.num_slots
    W = env.scenario.bandwidth
    best = -np.inf
    for action in env.legal(state):
        nxt, rates = env.step(state, action, episode)
        se = rates / W
        terminal = state.n == N - 1
        off_start = terminal and nxt.cells != env.start_cells
        r = reward(env.hyper.reward_kind, se, z, False, off_start, env.hyper.penalty)
        future = 0.0 if terminal else _best_return(env, episode, nxt, z + se)
        best = max(best, r + future)
    return best


@pytest.mark.slow
def test_greedy_policy_matches_exhaustive_search():
    scenario = default_scenario(num_nodes=2, uav_initials=((300.0, 300.0),), num_slots=4, horizon_seconds=240.0)
    profile = abundant_profile(scenario)
    hyper = CarlHyper(gamma=1.0, num_power_levels=2, corridor_width=90.0, reward_kind='ISR', deterministic=True)
    table, _, env = train_carl(scenario, _stationary(scenario), profile, hyper=hyper, episodes=5000,
                               rng=np.random.default_rng(7))
    assert env.start_cells == ((5, 5),)
    episode = draw_episode(scenario, profile, deterministic=True)
    greedy = run_episode(env, table, episode)
    oracle = _best_return(env, episode, env.reset(episode), np.zeros(scenario.num_nodes))
    assert greedy.success
    assert greedy.total_reward == pytest.approx(oracle, rel=1e-6)


def test_legal_action_cache_stays_bounded(pinned):
    profile = synth_profile('constant', 800.0, pinned)
    env = CarlEnvironment(pinned, profile, CarlHyper(), legal_cache_size=8)
    start = env.reset(draw_episode(pinned, profile, deterministic=True))
    levels = env.hyper.num_power_levels + 1
    for n in range(pinned.num_slots):
        for level in range(levels):
            state = dataclasses.replace(start, n=n, batteries=np.full(pinned.num_nodes, level * env.energy_unit))
            expected = legal_actions(state.cells, [None] * pinned.num_uavs, state.batteries, env.lattice,
                                     env.hyper.num_power_levels, env.energy_unit)
            assert env.legal(state) == expected
            assert env.legal(state) == expected
            assert env.legal_cache_info().currsize <= 8
    info = env.legal_cache_info()
    assert info.misses == pinned.num_slots * levels
    assert info.hits == pinned.num_slots * levels

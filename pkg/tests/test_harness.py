# -*- coding: utf-8 -*-
import json
import os

import numpy as np
import pandas as pd
import pytest

from harness import (QUICK_MIN_SLOTS, ExperimentSpec, SpecError, build_scenario, compare_methods,
                     evaluate_artifact, load_experiment_spec, main, run_experiment, seed_rng, set_seed)
from energy import load_profile
from scenario import load_scenario


def test_spec_validation():
    with pytest.raises(SpecError) as exc:
        ExperimentSpec(method='GREEDY')
    assert exc.value.field == 'method'
    with pytest.raises(SpecError):
        ExperimentSpec(seeds=[1, 1])
    with pytest.raises(SpecError):
        ExperimentSpec(seeds=[])
    with pytest.raises(SpecError):
        ExperimentSpec(method='CARL', corridor_source='SLC')
    with pytest.raises(SpecError) as exc:
        ExperimentSpec(solver={'max_outer': 3, 'tolerance': 1e-3})
    assert exc.value.field == 'solver.tolerance'
    with pytest.raises(SpecError) as exc:
        ExperimentSpec(method='RL', hyper={'alpha': 0.1})
    assert exc.value.field == 'hyper'
    spec = ExperimentSpec(method='UC', seeds=[3, 1], quick=True, episodes=250, rollouts=25)
    assert spec.seeds == [1, 3]
    assert spec.name == 'UC'
    assert spec.effective_episodes == 2 and spec.effective_rollouts == 2


def test_spec_document_rejects_unknown_keys(tmp_path):
    with pytest.raises(SpecError):
        load_experiment_spec({'method': 'UC', 'colour': 'red'})
    path = tmp_path / 'exp.json'
    path.write_text(json.dumps({'method': 'CC', 'seeds': [0, 2]}), encoding='utf-8')
    spec = load_experiment_spec(str(path), out=str(tmp_path), seeds=None)
    assert spec.method == 'CC' and spec.seeds == [0, 2] and spec.out == str(tmp_path)


def test_relative_scenario_path_resolved(tmp_path):
    (tmp_path / 'sc.json').write_text(json.dumps({'num_nodes': 2}), encoding='utf-8')
    (tmp_path / 'exp.json').write_text(json.dumps({'method': 'UC', 'scenario': 'sc.json'}), encoding='utf-8')
    spec = load_experiment_spec(str(tmp_path / 'exp.json'))
    assert build_scenario(spec, 0).num_nodes == 2


def test_seeding_helpers():
    set_seed(7)
    a = np.random.rand(3)
    set_seed(7)
    assert np.array_equal(a, np.random.rand(3))
    x = seed_rng(2024, 0, 1).random(4)
    assert np.array_equal(x, seed_rng(2024, 0, 1).random(4))
    assert not np.array_equal(x, seed_rng(2024, 0, 2).random(4))


def test_quick_and_random_layout_scenario():
    spec = ExperimentSpec(method='offline', quick=True, random_layout=True)
    sc = build_scenario(spec, 0)
    assert sc.num_slots == QUICK_MIN_SLOTS
    assert sc.slot_seconds == pytest.approx(60.0)
    assert np.all((sc.node_positions >= 60.0) & (sc.node_positions <= 540.0))
    assert np.array_equal(sc.node_positions, build_scenario(spec, 0).node_positions)
    assert not np.array_equal(sc.node_positions, build_scenario(spec, 1).node_positions)


def test_heuristic_experiment_is_byte_reproducible(tmp_path):
    outputs = []
    for run in ('a', 'b'):
        spec = ExperimentSpec(method='UC', seeds=[0, 1], quick=True, rollouts=40, out=str(tmp_path / run))
        frame = run_experiment(spec)
        assert (frame['status'] == 'ok').all()
        assert list(frame['seed']) == [0, 1]
        with open(os.path.join(spec.directory, 'summary.csv'), 'rb') as f:
            outputs.append(f.read())
        assert os.path.exists(os.path.join(spec.directory, 'seed_0', 'waypoints.csv'))
    assert outputs[0] == outputs[1]


def test_compare_requires_matching_seeds():
    a = pd.DataFrame({'method': ['UC', 'UC'], 'seed': [0, 1], 'status': ['ok', 'ok'],
                      'worst_rate': [1.0, 2.0], 'eval_worst_rate': [1.0, 2.0],
                      'success_probability': [1.0, 1.0], 'iterations': [0, 0]})
    b = a.assign(method='CC', seed=[0, 2])
    with pytest.raises(ValueError):
        compare_methods([a, b])
    c = a.assign(method='CC', eval_worst_rate=[3.0, 0.5])
    table = compare_methods([a, c]).set_index('method')
    assert table.loc['UC', 'best_fraction'] == pytest.approx(0.5)
    assert table.loc['CC', 'eval_worst_rate'] == pytest.approx(1.75)
    assert table.loc['UC', 'ok'] == 2


def test_cli_baseline_and_evaluate(tmp_path, capsys):
    out = str(tmp_path)
    assert main(['baseline', '--kind', 'UC', '--quick', '--seed', '0', '--out', out]) == 0
    seed_dir = os.path.join(out, 'UC', 'seed_0')
    summary = pd.read_csv(os.path.join(out, 'UC', 'summary.csv'))
    assert summary.loc[0, 'status'] == 'ok'
    assert summary.loc[0, 'worst_rate'] > 0

    scenario = load_scenario(os.path.join(seed_dir, 'scenario.json'))
    profile = load_profile('synthetic:bell:800', scenario)
    doc = evaluate_artifact(scenario, profile, 5, 0, plan_dir=seed_dir)
    assert doc['rollouts'] == 5
    assert doc['worst_rate'] == pytest.approx(summary.loc[0, 'worst_rate'], rel=1e-8)

    assert main(['compare', os.path.join(out, 'UC'), '--out', os.path.join(out, 'cmp')]) == 0
    assert os.path.exists(os.path.join(out, 'cmp', 'compare.csv'))


def test_cli_reports_bad_input(tmp_path):
    assert main(['run', str(tmp_path / 'missing.json')]) == 1
    with pytest.raises(SystemExit):
        main(['baseline', '--kind', 'ZIGZAG'])


def test_failed_seed_recorded(tmp_path):
    # N=8 时 CC 航线放不下
    spec = ExperimentSpec(method='CC', scenario={'num_slots': 8, 'horizon_seconds': 480.0}, rollouts=2,
                          out=str(tmp_path))
    frame = run_experiment(spec)
    assert frame.loc[0, 'status'] == 'failed'
    assert 'ValueError' in frame.loc[0, 'error']
    assert os.path.exists(os.path.join(spec.directory, 'seed_0', 'error.txt'))
    assert os.path.exists(os.path.join(spec.directory, 'seed_0', 'timing.json'))


def test_rl_methods_quick(tmp_path):
    for method in ('CARL', 'RL'):
        spec = ExperimentSpec(method=method, corridor_source='UC', quick=True, episodes=300, rollouts=20,
                              out=str(tmp_path))
        frame = run_experiment(spec)
        assert frame.loc[0, 'status'] == 'ok', frame.loc[0, 'error']
        seed_dir = os.path.join(spec.directory, 'seed_0')
        for name in ('qtable.json', 'curves.csv', 'evaluation.json'):
            assert os.path.exists(os.path.join(seed_dir, name))
        assert len(pd.read_csv(os.path.join(seed_dir, 'curves.csv'))) == 3


@pytest.mark.slow
def test_offline_quick_run(tmp_path):
    spec = ExperimentSpec(method='offline', quick=True, rollouts=20, out=str(tmp_path))
    frame = run_experiment(spec)
    assert frame.loc[0, 'status'] == 'ok', frame.loc[0, 'error']
    seed_dir = os.path.join(spec.directory, 'seed_0')
    with open(os.path.join(seed_dir, 'trace.json'), 'r', encoding='utf-8') as f:
        trace = json.load(f)
    assert trace['objective'] == pytest.approx(frame.loc[0, 'worst_rate'])
    assert frame.loc[0, 'eval_worst_rate'] > 0

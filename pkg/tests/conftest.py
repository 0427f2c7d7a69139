# -*- coding: utf-8 -*-
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'uav_eh_planner'))

from energy import HarvestProfile, synth_profile
from scenario import default_scenario


@pytest.fixture
def scenario():
    """默认场景：M=2, K=3, N=100, δ=60 s"""
    return default_scenario()


@pytest.fixture
def small_scenario():
    """M=2, K=2, N=20, δ=60 s"""
    return default_scenario(num_nodes=2, num_slots=20, horizon_seconds=1200.0)


@pytest.fixture
def bell_profile(scenario):
    return synth_profile('bell', 800.0, scenario)


@pytest.fixture
def small_profile(small_scenario):
    return synth_profile('constant', 800.0, small_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def abundant_profile(scenario, energy: float = None) -> HarvestProfile:
    """每时隙采集 ≥ B_max：电池每时隙开始都是满的"""
    e = scenario.battery_capacity if energy is None else energy
    return HarvestProfile(np.full((scenario.num_nodes, scenario.num_slots), e), 'abundant')

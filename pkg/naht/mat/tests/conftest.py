import numpy as np
import pytest

from naht.mat.envs import SignalGame, TypedGoalGridworld
from naht.mat.model import MATNAHT, ModelConfig
from naht.mat.teammates import build_pools


def small_config(env, k=2, d_model=16, n_heads=2, **kwargs):
    return ModelConfig(obs_dim=env.spec.obs_dim, num_actions=env.spec.num_actions,
                       k=k, d_model=d_model, n_heads=n_heads,
                       max_agents=env.spec.num_agents - 1, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def signal_env():
    return SignalGame(num_agents=3, num_types=5, horizon=4)


@pytest.fixture
def grid_env():
    return TypedGoalGridworld(num_agents=3, grid_size=4, num_goals=2, horizon=8)


@pytest.fixture
def signal_pools(signal_env):
    return build_pools('signal', signal_env.task_params(), num_families=5,
                       instances_per_family_train=2, instances_per_family_test=1,
                       seed=0)


@pytest.fixture
def grid_pools(grid_env):
    return build_pools('gridworld', grid_env.task_params(), num_families=2,
                       instances_per_family_train=2, instances_per_family_test=1,
                       seed=0)


@pytest.fixture
def small_policy(signal_env):
    return MATNAHT(small_config(signal_env), seed=0)

import numpy as np
import pytest

from naht.mat.envs import LEFT, STAY, UP
from naht.mat.exceptions import ObservationMismatchError
from naht.mat.teammates import (TeammateInstance, action_distribution, build_pools,
                                load_pools, save_pools, scripted_action,
                                teammate_act, zero_noise)


def _instance(env, task, family_id=0, **params):
    params.setdefault('epsilon', 0.0)
    return TeammateInstance(family_id=family_id, task=task, params=params,
                            task_params=env.task_params())


def test_signal_teammate_signals_then_waits(signal_env):
    inst = _instance(signal_env, 'signal', family_id=3)
    obs = signal_env.reset(team_type=3)
    assert scripted_action(inst, obs[2], 0) == 3
    assert scripted_action(inst, obs[2], 1) == signal_env.layout.noop
    assert scripted_action(inst, obs[2], 3) == signal_env.layout.noop


def test_gridworld_teammate_walks_to_its_goal(grid_env):
    grid_env.reset()
    grid_env.set_state((0, False, ((0, 0), (3, 3)), ((2, 2), (0, 3), (3, 0)), None))
    obs = grid_env.observe()
    # family 1 heads for goal 1 at (3, 3); family 2 wraps around to goal 0
    walker = _instance(grid_env, 'gridworld', family_id=1, move_priority=[0, 1, 2, 3])
    assert scripted_action(walker, obs[1], 0) == 1  # DOWN from (0, 3)
    other = _instance(grid_env, 'gridworld', family_id=2, move_priority=[2, 0, 1, 3])
    assert scripted_action(other, obs[0], 0) == LEFT
    first_up = _instance(grid_env, 'gridworld', family_id=2, move_priority=[0, 2, 1, 3])
    assert scripted_action(first_up, obs[0], 0) == UP


def test_gridworld_teammate_stays_on_goal(grid_env):
    grid_env.reset()
    grid_env.set_state((0, False, ((1, 1), (3, 3)), ((1, 1), (0, 3), (3, 0)), None))
    walker = _instance(grid_env, 'gridworld', family_id=0, move_priority=[0, 1, 2, 3])
    assert scripted_action(walker, grid_env.observe()[0], 0) == STAY


def test_epsilon_noise_frequency(signal_env, rng):
    inst = _instance(signal_env, 'signal', family_id=1, epsilon=0.3)
    obs = signal_env.reset(team_type=1)[2]
    draws = np.array([teammate_act(inst, obs, 0, rng) for _ in range(20000)])
    expected = action_distribution(inst, obs, 0)
    assert sum(expected.values()) == pytest.approx(1.0)
    assert expected[1] == pytest.approx(0.7 + 0.3 / 6)
    assert np.mean(draws == 1) == pytest.approx(expected[1], abs=0.02)


def test_zero_noise_is_deterministic(signal_env, rng):
    inst = zero_noise(_instance(signal_env, 'signal', family_id=4, epsilon=0.5))
    obs = signal_env.reset(team_type=4)[2]
    assert {teammate_act(inst, obs, 0, rng) for _ in range(100)} == {4}
    assert action_distribution(inst, obs, 0) == {4: 1.0}


def test_observation_width_is_checked(signal_env):
    inst = _instance(signal_env, 'signal')
    with pytest.raises(ObservationMismatchError):
        scripted_action(inst, np.zeros(7), 0)


def test_pools_are_disjoint_and_cover_families(signal_env):
    train, test = build_pools('signal', signal_env.task_params(), num_families=5,
                              instances_per_family_train=3,
                              instances_per_family_test=2, seed=7)
    assert (len(train), len(test)) == (15, 10)
    assert train.family_ids == test.family_ids == [0, 1, 2, 3, 4]
    assert not {i.key() for i in train.instances} & {i.key() for i in test.instances}
    assert all(0.0 <= i.epsilon <= 0.1 for i in train.instances + test.instances)


def test_pools_are_seeded(signal_env):
    a = build_pools('signal', signal_env.task_params(), seed=3)
    b = build_pools('signal', signal_env.task_params(), seed=3)
    c = build_pools('signal', signal_env.task_params(), seed=4)
    assert a == b
    assert a != c


def test_pool_validation(signal_env):
    with pytest.raises(ValueError):
        build_pools('signal', signal_env.task_params(), num_families=6)
    with pytest.raises(ValueError):
        build_pools('signal', signal_env.task_params(), instances_per_family_test=0)


def test_save_and_load_pools(tmp_path, grid_env, grid_pools):
    path = tmp_path / 'pools.json'
    save_pools(path, *grid_pools)
    train, test = load_pools(path)
    assert (train, test) == grid_pools
    assert train.instances[0].params['move_priority'] == \
        grid_pools[0].instances[0].params['move_priority']


def test_signal_code_follows_the_permutation(signal_env):
    inst = _instance(signal_env, 'signal', family_id=0, permutation=[2, 0, 1, 4, 3])
    obs = signal_env.reset(team_type=inst.team_type)
    assert inst.team_type == 2
    assert scripted_action(inst, obs[1], 0) == 2
    assert scripted_action(inst, obs[1], 1) == signal_env.layout.noop


def test_instances_of_one_family_signal_differently(signal_env):
    train, test = build_pools('signal', signal_env.task_params(),
                              instances_per_family_train=6, instances_per_family_test=6,
                              seed=1, epsilon_max=0.0)
    obs = signal_env.reset()[0]
    for pool in (train, test):
        codes = {scripted_action(i, obs, 0) for i in pool.instances if i.family_id == 0}
        assert len(codes) > 1
    assert {i.team_type for i in train.instances} == set(range(5))


def test_families_differ_within_a_round(signal_env):
    train, _ = build_pools('signal', signal_env.task_params(), num_families=4,
                           instances_per_family_train=5, seed=2)
    rounds = [train.instances[i:i + 4] for i in range(0, len(train), 4)]
    for members in rounds:
        assert [i.family_id for i in members] == [0, 1, 2, 3]
        assert len({i.team_type for i in members}) == 4
        assert len({tuple(i.params['permutation']) for i in members}) == 1


def test_unpermuted_pools_signal_the_family(signal_env):
    train, test = build_pools('signal', signal_env.task_params(), permute_signals=False)
    assert all(i.team_type == i.family_id for i in train.instances + test.instances)
    assert all('permutation' not in i.params for i in train.instances)


def test_family_frequencies_are_uniform(grid_env):
    train, _ = build_pools('gridworld', grid_env.task_params(), num_families=5,
                           instances_per_family_train=100, seed=9)
    assert len(train) == 500
    counts = np.bincount([i.family_id for i in train.instances], minlength=5)
    assert np.all(np.abs(counts / 500 - 0.2) <= 0.05)

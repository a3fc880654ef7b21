import pytest

from naht.mat import oracles
from naht.mat.envs import SignalGame, TypedGoalGridworld
from naht.mat.exceptions import OracleBudgetExceeded
from naht.mat.oracles import oracle_memoryless_return, oracle_optimal_return
from naht.mat.teammates import build_pools, scripted_action, zero_noise


def _teammates(env, num_families, epsilon_max=0.1, noiseless=True):
    train, _ = build_pools(env.name, env.task_params(), num_families=num_families,
                           instances_per_family_train=1, instances_per_family_test=1,
                           epsilon_max=epsilon_max)
    return [zero_noise(i) for i in train.instances] if noiseless else list(train.instances)


def test_signal_game_needs_memory(signal_env):
    teammates = _teammates(signal_env, 5)
    assert oracle_optimal_return(signal_env, teammates) == pytest.approx(1.0, abs=1e-12)
    assert oracle_memoryless_return(signal_env, teammates) == pytest.approx(0.2, abs=1e-12)


@pytest.mark.parametrize('num_types', [2, 3, 4])
def test_memoryless_is_one_over_types(num_types):
    env = SignalGame(num_agents=3, num_types=num_types, horizon=3)
    teammates = _teammates(env, num_types)
    assert oracle_memoryless_return(env, teammates) == pytest.approx(1 / num_types)
    assert oracle_optimal_return(env, teammates) == pytest.approx(1.0)


def test_horizon_one_has_nothing_to_remember():
    env = SignalGame(num_agents=2, num_types=4, horizon=1)
    teammates = _teammates(env, 4)
    assert oracle_optimal_return(env, teammates) == pytest.approx(0.25)
    assert oracle_memoryless_return(env, teammates) == pytest.approx(0.25)


def test_single_family_is_trivial(signal_env):
    teammates = _teammates(signal_env, 1)
    assert oracle_optimal_return(signal_env, teammates) == pytest.approx(1.0)
    assert oracle_memoryless_return(signal_env, teammates) == pytest.approx(1.0)


def test_noisy_teammates_lower_the_optimum():
    env = SignalGame(num_agents=2, num_types=3, horizon=3)
    teammates = _teammates(env, 3, epsilon_max=0.5, noiseless=False)
    optimal = oracle_optimal_return(env, teammates)
    memoryless = oracle_memoryless_return(env, teammates)
    assert memoryless - 1e-12 <= optimal < 1.0
    assert optimal > 1 / 3


def test_gridworld_oracles_are_ordered():
    env = TypedGoalGridworld(num_agents=2, grid_size=3, num_goals=1, horizon=2)
    teammates = _teammates(env, 1)
    optimal = oracle_optimal_return(env, teammates, seed=3)
    memoryless = oracle_memoryless_return(env, teammates, seed=3)
    assert memoryless <= optimal + 1e-12
    assert -2 * env.step_penalty - 1e-12 <= memoryless
    assert optimal <= 1.0


def test_oracle_does_not_touch_the_template(signal_env):
    signal_env.reset(team_type=4)
    before = signal_env.get_state()
    oracle_optimal_return(signal_env, _teammates(signal_env, 2))
    assert signal_env.get_state() == before


def test_budget(signal_env, monkeypatch):
    monkeypatch.setattr(oracles, 'MAX_BRANCHES', 10)
    with pytest.raises(OracleBudgetExceeded):
        oracle_optimal_return(signal_env, _teammates(signal_env, 5))


def test_needs_teammates(signal_env):
    with pytest.raises(ValueError):
        oracle_optimal_return(signal_env, [])


def _best_open_loop(env, instance, slots, seed):
    # with one deterministic teammate every history is known in advance, so
    # the best history-dependent policy is the best fixed action sequence
    env = env.spawn()
    env.reset(seed, controlled_slots=slots, team_type=instance.team_type)
    m = env.spec.num_agents

    def search(state):
        best = float('-inf')
        for action in range(env.spec.num_actions):
            env.set_state(state)
            obs = env.observe()
            joint = [action if s in slots else scripted_action(instance, obs[s], env.t)
                     for s in range(m)]
            result = env.step(joint)
            value = result.reward + (0.0 if result.done else search(env.get_state()))
            best = max(best, value)
        return best

    return search(env.get_state())


@pytest.mark.parametrize('seed', [0, 5])
def test_gridworld_optimum_matches_brute_force(seed):
    env = TypedGoalGridworld(num_agents=2, grid_size=3, num_goals=2, horizon=6)
    teammates = _teammates(env, 1)
    expected = sum(_best_open_loop(env, teammates[0], (slot,), seed) for slot in (0, 1)) / 2
    optimal = oracle_optimal_return(env, teammates, seed=seed)
    assert optimal == pytest.approx(expected, abs=1e-12)
    assert oracle_memoryless_return(env, teammates, seed=seed) <= optimal + 1e-12


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_single_goal_needs_no_memory(seed):
    # every family heads for the one goal, and the whole 3x3 grid is in view
    env = TypedGoalGridworld(num_agents=2, grid_size=3, num_goals=1, horizon=3)
    teammates = _teammates(env, 2)
    optimal = oracle_optimal_return(env, teammates, seed=seed)
    assert oracle_memoryless_return(env, teammates, seed=seed) == pytest.approx(optimal,
                                                                               abs=1e-12)


def test_permuted_rounds_keep_the_signal_oracles(signal_env):
    train, _ = build_pools('signal', signal_env.task_params(), num_families=5,
                           instances_per_family_train=2, instances_per_family_test=1)
    teammates = [zero_noise(i) for i in train.instances]
    assert len({i.team_type for i in teammates}) == 5
    assert oracle_optimal_return(signal_env, teammates) == pytest.approx(1.0, abs=1e-12)
    assert oracle_memoryless_return(signal_env, teammates) == pytest.approx(0.2, abs=1e-12)

import numpy as np
import pytest

from naht.mat.exceptions import ConfigError
from naht.mat.rollout import (THREADS_ENV, RolloutBuffer, rollout_workers,
                              run_episode, run_episodes)
from naht.mat.sampler import TeamComposition, sample_composition


def _compositions(env, pool, n, seed=0):
    rng = np.random.default_rng(seed)
    return [sample_composition(env.spec.num_agents, pool, rng) for _ in range(n)]


def test_episode_record(small_policy, signal_env, signal_pools):
    comp = TeamComposition(3, 2, (0, 2), signal_pools[0].instances[0], 11)
    ep = run_episode(small_policy, signal_env.spawn(), comp)
    assert 1 <= len(ep) <= signal_env.spec.horizon
    assert ep.dones[-1] and not ep.dones[:-1].any()
    for step in ep.steps:
        assert step.window.slots == (0, 2)
        assert step.actions.shape == step.log_probs.shape == (2,)
        assert (step.log_probs <= 0).all()
    assert ep.total_return in (0.0, 1.0)


def test_episode_depends_only_on_composition(small_policy, signal_env, signal_pools):
    comps = _compositions(signal_env, signal_pools[0], 6)
    a = run_episodes(small_policy, signal_env, comps, num_workers=1)
    b = run_episodes(small_policy, signal_env, comps, num_workers=3)
    c = run_episodes(small_policy, signal_env, comps[::-1], num_workers=1)[::-1]
    for x, y, z in zip(a, b, c):
        assert [s.actions.tolist() for s in x.steps] == \
            [s.actions.tolist() for s in y.steps] == [s.actions.tolist() for s in z.steps]
        assert x.rewards.tolist() == y.rewards.tolist() == z.rewards.tolist()


def test_on_step_sees_every_step(small_policy, signal_env, signal_pools):
    comp = _compositions(signal_env, signal_pools[0], 1, seed=4)[0]
    seen = []
    ep = run_episode(small_policy, signal_env, comp, greedy=True,
                     on_step=lambda t, env, obs, joint, reward: seen.append((t, list(joint))))
    assert [t for t, _ in seen] == list(range(len(ep)))
    for (_, joint), step in zip(seen, ep.steps):
        assert [joint[s] for s in comp.controlled_slots] == step.actions.tolist()


def test_rollout_buffer(small_policy, signal_env, signal_pools):
    comps = _compositions(signal_env, signal_pools[0], 4)
    buffer = RolloutBuffer(run_episodes(small_policy, signal_env, comps))
    assert len(buffer) == 4
    assert buffer.num_steps == sum(len(ep) for ep in buffer.episodes)
    assert buffer.compositions == comps
    assert buffer.mean_return == pytest.approx(
        np.mean([ep.total_return for ep in buffer.episodes]))


def test_rollout_workers(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert rollout_workers(default=2) == 2
    monkeypatch.setenv(THREADS_ENV, '4')
    assert rollout_workers() == 4
    monkeypatch.setenv(THREADS_ENV, '0')
    assert rollout_workers() == 1
    monkeypatch.setenv(THREADS_ENV, 'many')
    with pytest.raises(ConfigError):
        rollout_workers()

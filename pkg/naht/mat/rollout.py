"""
Playing episodes with a controlled subteam.

Every episode derives two independent generators from its seed, one for the
uncontrolled teammates and one for the policy's action sampling, so an
episode's outcome depends only on its :class:`~naht.mat.sampler.TeamComposition`
and the policy parameters, never on which worker ran it.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import os

import numpy as np

from .exceptions import ConfigError
from .teammates import teammate_act

logger = logging.getLogger(__name__)

THREADS_ENV = 'NAHT_MAT_THREADS'


@dataclass
class StepRecord:
    window: object
    actions: np.ndarray
    log_probs: np.ndarray
    value: float
    reward: float
    done: bool


@dataclass
class EpisodeRecord:
    """
    One episode of controlled-agent data.

    ``advantages`` (normalized across the batch), ``raw_advantages`` and
    ``returns`` are filled by :func:`naht.mat.training.compute_gae`.
    """
    composition: object
    steps: list = field(default_factory=list)
    advantages: np.ndarray = None
    raw_advantages: np.ndarray = None
    returns: np.ndarray = None

    def __len__(self):
        return len(self.steps)

    @property
    def rewards(self):
        return np.array([s.reward for s in self.steps])

    @property
    def values(self):
        return np.array([s.value for s in self.steps])

    @property
    def dones(self):
        return np.array([s.done for s in self.steps], dtype=bool)

    @property
    def total_return(self):
        return float(self.rewards.sum())


@dataclass
class RolloutBuffer:
    episodes: list

    def __len__(self):
        return len(self.episodes)

    @property
    def num_steps(self):
        return sum(len(ep) for ep in self.episodes)

    @property
    def compositions(self):
        return [ep.composition for ep in self.episodes]

    @property
    def mean_return(self):
        return float(np.mean([ep.total_return for ep in self.episodes]))


def rollout_workers(default=1):
    "Worker cap from ``NAHT_MAT_THREADS``."
    value = os.environ.get(THREADS_ENV)
    if not value:
        return default
    try:
        workers = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={value!r} is not an integer") from None
    return max(1, workers)


def episode_rngs(episode_seed):
    "Independent (teammate, policy) generators of one episode."
    team, policy = np.random.SeedSequence(episode_seed).spawn(2)
    return np.random.default_rng(team), np.random.default_rng(policy)


def run_episode(policy, env, composition, greedy=False, on_step=None):
    """
    Play one episode with ``composition``.

    Parameters
    ----------
    policy : MATNAHT or IndependentBaseline
    env : DecPOMDP
        Reset here; callers running episodes concurrently pass separate
        environments.
    composition : TeamComposition
    greedy : bool, optional
    on_step : callable, optional
        ``on_step(t, env, observations, joint_action, reward)`` after each step.

    Returns
    -------
    EpisodeRecord
    """
    team_rng, policy_rng = episode_rngs(composition.episode_seed)
    instance = composition.teammate_instance
    slots = list(composition.controlled_slots)
    obs = env.reset(seed=composition.episode_seed,
                    controlled_slots=composition.controlled_slots,
                    team_type=instance.team_type)
    history = policy.new_history(composition.controlled_slots)
    episode = EpisodeRecord(composition)
    done = False
    while not done:
        history.observe(obs)
        window = history.window()
        decision, value = policy.act(window, policy_rng, greedy=greedy)
        joint = np.zeros(env.spec.num_agents, dtype=np.intp)
        joint[slots] = decision.actions
        for slot in composition.uncontrolled_slots:
            joint[slot] = teammate_act(instance, obs[slot], env.t, team_rng)
        t = env.t
        result = env.step(joint)
        history.record(decision.actions)
        if on_step is not None:
            on_step(t, env, obs, joint, result.reward)
        episode.steps.append(StepRecord(window, decision.actions,
                                        decision.log_probs, value,
                                        result.reward, result.done))
        obs, done = result.observations, result.done
    return episode


def run_episodes(policy, env, compositions, greedy=False, num_workers=None):
    """
    Run one episode per composition, each on a fresh copy of ``env``. Results
    are in composition order and do not depend on ``num_workers``.
    """
    num_workers = rollout_workers() if num_workers is None else num_workers

    def work(composition):
        return run_episode(policy, env.spawn(), composition, greedy=greedy)

    if num_workers <= 1 or len(compositions) <= 1:
        return [work(c) for c in compositions]
    with ThreadPoolExecutor(max_workers=num_workers) as pool:
        return list(pool.map(work, compositions))


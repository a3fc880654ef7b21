"""
Per-episode team sampling.

An uncontrolled team (one teammate instance) is drawn uniformly from the pool,
then the number of controlled agents N uniformly from 1..M-1, then the set of
controlled slots uniformly among the size-N subsets of the M slots. Every
uncontrolled slot of the episode is driven by the same instance.
"""
from dataclasses import dataclass

from .teammates import TeammateInstance


@dataclass(frozen=True)
class TeamComposition:
    num_agents: int
    num_controlled: int
    controlled_slots: tuple
    teammate_instance: TeammateInstance
    episode_seed: int

    def __post_init__(self):
        m, n = self.num_agents, self.num_controlled
        if not 1 <= n <= m - 1:
            raise ValueError(f"need 1 <= N <= M-1, got N={n}, M={m}")
        slots = self.controlled_slots
        if (len(slots) != n or list(slots) != sorted(set(slots))
                or not all(0 <= s < m for s in slots)):
            raise ValueError(f"invalid controlled slots {slots} for M={m}, N={n}")

    @property
    def uncontrolled_slots(self):
        controlled = set(self.controlled_slots)
        return tuple(s for s in range(self.num_agents) if s not in controlled)

    def to_dict(self):
        return {'M': self.num_agents, 'N': self.num_controlled,
                'controlled_slots': list(self.controlled_slots),
                'teammate_instance': self.teammate_instance.to_dict(),
                'episode_seed': self.episode_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(num_agents=d['M'], num_controlled=d['N'],
                   controlled_slots=tuple(d['controlled_slots']),
                   teammate_instance=TeammateInstance.from_dict(d['teammate_instance']),
                   episode_seed=d['episode_seed'])


def sample_composition(num_agents, pool, rng):
    """
    Draw one episode's team.

    Parameters
    ----------
    num_agents : int
        M, at least 2.
    pool : TeammatePool
        Non-empty.
    rng : numpy.random.Generator

    Returns
    -------
    TeamComposition
    """
    if num_agents < 2:
        raise ValueError(f"need at least 2 agents, got {num_agents}")
    if not len(pool):
        raise ValueError("cannot sample from an empty teammate pool")
    instance = pool.instances[int(rng.integers(len(pool)))]
    n = int(rng.integers(1, num_agents))
    slots = tuple(sorted(int(s) for s in rng.choice(num_agents, size=n, replace=False)))
    return TeamComposition(num_agents=num_agents, num_controlled=n,
                           controlled_slots=slots, teammate_instance=instance,
                           episode_seed=int(rng.integers(2 ** 32)))


def controlled_count_histogram(compositions):
    "``{N: count}`` over ``compositions``, keys as strings for JSON."
    counts = {}
    for comp in compositions:
        key = str(comp.num_controlled)
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


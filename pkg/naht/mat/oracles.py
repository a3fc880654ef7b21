"""
Exact optimal returns by exhaustive search.

Both oracles average uniformly over team compositions (N uniform in 1..M-1,
then a uniform size-N slot subset) and over the given teammate instances, and
report the undiscounted expected return. Teammate ε-noise is enumerated as
chance branches.

``oracle_optimal_return`` optimizes a centralized controller that sees the
full history of the controlled agents' observations;
``oracle_memoryless_return`` restricts it to the current observations. Every
observation carries the timestep, so a memoryless policy may still differ
between steps.
"""
from collections import defaultdict
from itertools import combinations, product
import logging
from math import comb

from .exceptions import OracleBudgetExceeded
from .teammates import action_distribution

logger = logging.getLogger(__name__)

MAX_BRANCHES = 10 ** 7


class _Search:
    """
    Search state for one composition.

    A particle is ``(instance_index, env_state)``; distributions map particles
    to unnormalized probability mass.
    """
    def __init__(self, env, instances, slots, budget):
        self.env = env
        self.instances = instances
        self.slots = slots
        self.uncontrolled = tuple(s for s in range(env.spec.num_agents)
                                  if s not in slots)
        self.joint_actions = list(product(range(env.spec.num_actions),
                                          repeat=len(slots)))
        self.budget = budget
        self._memo = {}

    def tick(self):
        self.budget[0] += 1
        if self.budget[0] > MAX_BRANCHES:
            raise OracleBudgetExceeded(
                f"oracle search exceeded {MAX_BRANCHES} policy branches; "
                "shrink the instance (fewer agents, actions, or a shorter horizon)")

    def initial(self, seed):
        dist = {}
        weight = 1.0 / len(self.instances)
        for index, instance in enumerate(self.instances):
            self.env.reset(seed, controlled_slots=self.slots,
                           team_type=instance.team_type)
            particle = (index, self.env.get_state())
            dist[particle] = dist.get(particle, 0.0) + weight
        return dist

    def info_key(self, particle):
        self.env.set_state(particle[1])
        obs = self.env.observe()
        return b''.join(obs[s].tobytes() for s in self.slots)

    def group(self, dist):
        groups = defaultdict(dict)
        for particle, weight in dist.items():
            groups[self.info_key(particle)][particle] = weight
        return [groups[key] for key in sorted(groups)]

    def expand(self, dist, controlled_action):
        """
        Apply one controlled joint action to every particle.

        Returns
        -------
        (float, dict)
            Expected immediate reward mass and the surviving distribution.
        """
        env = self.env
        reward = 0.0
        successors = {}
        for (index, state), weight in dist.items():
            env.set_state(state)
            obs = env.observe()
            t = env.t
            instance = self.instances[index]
            choices = [sorted(action_distribution(instance, obs[s], t).items())
                       for s in self.uncontrolled]
            for branch in product(*choices):
                prob = weight
                joint = [0] * env.spec.num_agents
                for slot, action in zip(self.slots, controlled_action):
                    joint[slot] = action
                for slot, (action, p) in zip(self.uncontrolled, branch):
                    joint[slot] = action
                    prob *= p
                env.set_state(state)
                result = env.step(joint)
                reward += prob * result.reward
                if not result.done:
                    key = (index, env.get_state())
                    successors[key] = successors.get(key, 0.0) + prob
        return reward, successors

    @staticmethod
    def signature(dist):
        return tuple(sorted(dist.items()))

    def optimal(self, dist):
        "Best value when every information set picks its own action."
        return sum(self.best_response(group) for group in self.group(dist))

    def best_response(self, info_set):
        sig = ('h',) + self.signature(info_set)
        if sig in self._memo:
            return self._memo[sig]
        best = float('-inf')
        for action in self.joint_actions:
            self.tick()
            reward, successors = self.expand(info_set, action)
            value = reward + (self.optimal(successors) if successors else 0.0)
            best = max(best, value)
        self._memo[sig] = best
        return best

    def memoryless(self, dist):
        """
        Best value when one action is fixed per current observation.

        Particles advance in lockstep, so all share the same timestep. For
        each observation only actions with distinct consequences are
        combined.
        """
        if not dist:
            return 0.0
        sig = ('m',) + self.signature(dist)
        if sig in self._memo:
            return self._memo[sig]
        options = []
        for info_set in self.group(dist):
            outcomes = {}
            for action in self.joint_actions:
                self.tick()
                reward, successors = self.expand(info_set, action)
                key = self.signature(successors)
                if key not in outcomes or reward > outcomes[key][0]:
                    outcomes[key] = (reward, successors)
            options.append(list(outcomes.values()))
        best = float('-inf')
        for choice in product(*options):
            self.tick()
            reward = sum(r for r, _ in choice)
            merged = {}
            for _, successors in choice:
                for particle, weight in successors.items():
                    merged[particle] = merged.get(particle, 0.0) + weight
            best = max(best, reward + self.memoryless(merged))
        self._memo[sig] = best
        return best


def _compositions(num_agents):
    for n in range(1, num_agents):
        subsets = list(combinations(range(num_agents), n))
        for slots in subsets:
            yield slots, 1.0 / ((num_agents - 1) * comb(num_agents, n))


def _oracle(env, teammates, seed, method):
    teammates = list(teammates)
    if not teammates:
        raise ValueError("oracle needs at least one teammate instance")
    env = env.spawn()
    budget = [0]
    total = 0.0
    for slots, weight in _compositions(env.spec.num_agents):
        search = _Search(env, teammates, slots, budget)
        total += weight * getattr(search, method)(search.initial(seed))
    logger.debug("oracle method=%s env=%s branches=%d value=%.12f",
                 method, env.name, budget[0], total)
    return total


def oracle_optimal_return(env, teammates, seed=0):
    """
    Exact best expected return over deterministic history-dependent
    controlled policies.

    Parameters
    ----------
    env : DecPOMDP
        Template environment; it is not modified.
    teammates : sequence of TeammateInstance
        Weighted uniformly.
    seed : int
        Reset seed (fixes the gridworld layout).

    Raises
    ------
    OracleBudgetExceeded
        More than ``MAX_BRANCHES`` policy branches would be evaluated.
    """
    return _oracle(env, teammates, seed, 'optimal')


def oracle_memoryless_return(env, teammates, seed=0):
    """
    Exact best expected return over deterministic policies of the current
    controlled observations only. Same parameters as
    :func:`oracle_optimal_return`.
    """
    return _oracle(env, teammates, seed, 'memoryless')

"""
Scripted uncontrolled teammates.

A *family* is a behavior type (the integer ``family_id`` τ) for a given task;
an *instance* is one concrete draw of the family's parameters: ε-noise, plus a
code permutation in the Signal Game or a move tie-break order in the
gridworld. Train and test pools hold disjoint instances drawn from the same
parameter distribution.

Signal-Game instances signal ``permutation[τ]`` instead of τ, and that code is
the type the controlled agents are rewarded for matching. Pools are drawn in
rounds of one instance per family sharing a single permutation, so within a
round every family signals a different code.
"""
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path

import numpy as np

from .envs import GridLayout, MOVES, SignalLayout, STAY
from .exceptions import ObservationMismatchError

logger = logging.getLogger(__name__)

DEFAULT_NUM_FAMILIES = 5
DEFAULT_TRAIN_PER_FAMILY = 8
DEFAULT_TEST_PER_FAMILY = 4
DEFAULT_EPSILON_MAX = 0.1


def signal_code(family_id, params):
    "The code a Signal-Game instance of ``family_id`` plays at t=0."
    permutation = params.get('permutation')
    return family_id if permutation is None else int(permutation[family_id])


def _signal_action(obs, t, family_id, params, layout):
    return signal_code(family_id, params) if t == 0 else layout.noop


def _greedy_goal_action(obs, t, family_id, params, layout):
    "Step towards goal ``family_id mod G``, ties broken by the move priority."
    row, col = layout.own_cell(obs)
    goal_row, goal_col = layout.goal_cell(obs, family_id % layout.num_goals)
    size = layout.grid_size
    best, best_dist = STAY, None
    for move in list(params['move_priority']) + [STAY]:
        dr, dc = MOVES[move]
        r = min(max(row + dr, 0), size - 1)
        c = min(max(col + dc, 0), size - 1)
        dist = abs(goal_row - r) + abs(goal_col - c)
        if best_dist is None or dist < best_dist:
            best, best_dist = move, dist
    return best


def _signal_params(rng, epsilon_max):
    return {'epsilon': float(rng.uniform(0.0, epsilon_max))}


def _signal_round(rng, task_params, permute):
    if not permute:
        return {}
    return {'permutation': [int(c) for c in rng.permutation(task_params['num_types'])]}


def _gridworld_round(rng, task_params, permute):
    return {}


def _gridworld_params(rng, epsilon_max):
    return {'epsilon': float(rng.uniform(0.0, epsilon_max)),
            'move_priority': [int(m) for m in rng.permutation(4)]}


@dataclass(frozen=True)
class TeammateFamily:
    """
    Attributes
    ----------
    family_id : int
    task : str
    behavior : callable
        ``behavior(obs, t, family_id, params, layout) -> action``, the
        noise-free scripted action.
    param_distribution : callable
        ``param_distribution(rng, epsilon_max) -> params``.
    round_distribution : callable
        ``round_distribution(rng, task_params, permute) -> params`` shared by
        the instances of one drawing round.
    """
    family_id: int
    task: str
    behavior: object
    param_distribution: object
    round_distribution: object


_TASK_BEHAVIORS = {
    'signal': (_signal_action, _signal_params, _signal_round),
    'gridworld': (_greedy_goal_action, _gridworld_params, _gridworld_round),
}


def family(task, family_id):
    try:
        behavior, params, rounds = _TASK_BEHAVIORS[task]
    except KeyError:
        raise ValueError(f"no teammate families for task {task!r}") from None
    return TeammateFamily(family_id, task, behavior, params, rounds)


def layout_for(task, task_params):
    if task == 'signal':
        return SignalLayout(task_params['num_agents'], task_params['num_types'])
    return GridLayout(task_params['num_agents'], task_params['num_goals'],
                      task_params['grid_size'])


@dataclass(frozen=True)
class TeammateInstance:
    """
    One concrete teammate; fully reproducible from its fields.
    """
    family_id: int
    task: str
    params: dict = field(hash=False)
    instance_seed: int = 0
    task_params: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def epsilon(self):
        return float(self.params.get('epsilon', 0.0))

    @property
    def team_type(self):
        "Type the environment rewards against when this instance plays."
        if self.task == 'signal':
            return signal_code(self.family_id, self.params)
        return self.family_id

    @property
    def layout(self):
        return layout_for(self.task, self.task_params)

    def key(self):
        "Identity used for pool disjointness."
        return (self.family_id, json.dumps(self.params, sort_keys=True),
                self.instance_seed)

    def to_dict(self):
        return {'family_id': self.family_id, 'task': self.task,
                'params': self.params, 'instance_seed': self.instance_seed,
                'task_params': self.task_params}

    @classmethod
    def from_dict(cls, d):
        return cls(family_id=int(d['family_id']), task=d['task'],
                   params=dict(d['params']),
                   instance_seed=int(d['instance_seed']),
                   task_params=dict(d.get('task_params', {})))


def _check_obs(instance, obs):
    obs = np.asarray(obs)
    layout = instance.layout
    if obs.shape != (layout.obs_dim,):
        raise ObservationMismatchError(
            f"teammate for {instance.task!r} expects obs of length "
            f"{layout.obs_dim}, got shape {obs.shape}")
    return obs, layout


def scripted_action(instance, obs, t):
    "The instance's noise-free action."
    obs, layout = _check_obs(instance, obs)
    fam = family(instance.task, instance.family_id)
    return int(fam.behavior(obs, t, instance.family_id, instance.params, layout))


def teammate_act(instance, obs, t, rng):
    """
    Act for one uncontrolled slot.

    With probability ε (the instance's noise level) a uniformly random action
    is played, otherwise the family's scripted action. Exactly one uniform
    draw is consumed per call, plus one integer draw when the noise fires.
    """
    action = scripted_action(instance, obs, t)
    if rng.random() < instance.epsilon:
        return int(rng.integers(instance.layout.num_actions))
    return action


def action_distribution(instance, obs, t):
    """
    Exact distribution of :func:`teammate_act` as ``{action: probability}``.
    """
    action = scripted_action(instance, obs, t)
    eps = instance.epsilon
    n = instance.layout.num_actions
    if eps == 0.0:
        return {action: 1.0}
    probs = {a: eps / n for a in range(n)}
    probs[action] += 1.0 - eps
    return probs


@dataclass(frozen=True)
class TeammatePool:
    instances: tuple
    role: str

    def __post_init__(self):
        if self.role not in ('train', 'test'):
            raise ValueError(f"pool role must be 'train' or 'test', got {self.role!r}")

    def __len__(self):
        return len(self.instances)

    @property
    def family_ids(self):
        return sorted({inst.family_id for inst in self.instances})

    def to_dict(self):
        return {'role': self.role,
                'instances': [inst.to_dict() for inst in self.instances]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(TeammateInstance.from_dict(i) for i in d['instances']),
                   d['role'])


def build_pools(task, task_params, num_families=DEFAULT_NUM_FAMILIES,
                instances_per_family_train=DEFAULT_TRAIN_PER_FAMILY,
                instances_per_family_test=DEFAULT_TEST_PER_FAMILY, seed=0,
                epsilon_max=DEFAULT_EPSILON_MAX, permute_signals=True):
    """
    Draw disjoint train and test pools covering every family.

    Each pool is drawn in rounds; a round adds one instance of every family,
    and its instances share the round parameters (the Signal-Game code
    permutation).

    Parameters
    ----------
    task : {'signal', 'gridworld'}
    task_params : dict
        ``env.task_params()`` of the environment the teammates will play in.
    num_families : int
    instances_per_family_train, instances_per_family_test : int
    seed : int
    epsilon_max : float
        ε is drawn uniformly from [0, epsilon_max].
    permute_signals : bool, optional
        Draw a code permutation per round. Without it every Signal-Game
        instance of family τ signals τ.

    Returns
    -------
    (TeammatePool, TeammatePool)
        Train and test pools.
    """
    counts = (num_families, instances_per_family_train, instances_per_family_test)
    if min(counts) < 1:
        raise ValueError(f"pool counts must be >= 1, got {counts}")
    if task == 'signal' and num_families > task_params['num_types']:
        raise ValueError(f"{num_families} families but the signal game has "
                         f"only {task_params['num_types']} types")
    rng = np.random.default_rng(seed)
    families = [family(task, family_id) for family_id in range(num_families)]
    seen = set()
    pools = {'train': [], 'test': []}
    for role, count in (('train', instances_per_family_train),
                        ('test', instances_per_family_test)):
        for _ in range(count):
            shared = families[0].round_distribution(rng, task_params, permute_signals)
            for fam in families:
                while True:
                    params = dict(fam.param_distribution(rng, epsilon_max), **shared)
                    inst = TeammateInstance(
                        family_id=fam.family_id, task=task, params=params,
                        instance_seed=int(rng.integers(2 ** 31)),
                        task_params=dict(task_params))
                    if inst.key() not in seen:
                        break
                seen.add(inst.key())
                pools[role].append(inst)
    logger.debug("build_pools task=%s families=%d train=%d test=%d seed=%d "
                 "permute_signals=%s", task, num_families, len(pools['train']),
                 len(pools['test']), seed, permute_signals)
    return (TeammatePool(tuple(pools['train']), 'train'),
            TeammatePool(tuple(pools['test']), 'test'))


def save_pools(path, train, test):
    Path(path).write_text(json.dumps(pools_to_dict(train, test), sort_keys=True,
                                     indent=1))


def pools_to_dict(train, test):
    return {'train': train.to_dict(), 'test': test.to_dict()}


def load_pools(path):
    data = json.loads(Path(path).read_text())
    return (TeammatePool.from_dict(data['train']),
            TeammatePool.from_dict(data['test']))


def zero_noise(instance):
    "Copy of ``instance`` with ε = 0."
    params = dict(instance.params, epsilon=0.0)
    return TeammateInstance(instance.family_id, instance.task, params,
                            instance.instance_seed, instance.task_params)

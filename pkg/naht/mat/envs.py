"""
Cooperative Dec-POMDP environments with a shared reward.

Two toy tasks are provided: :class:`SignalGame`, where the teammates' type can
only be read off the first step and must be remembered, and
:class:`TypedGoalGridworld`, where controlled agents infer a teammate's goal
from its movement. Both are deterministic given the reset seed and the joint
actions, and both expose ``get_state``/``set_state`` so the exact oracles in
:mod:`naht.mat.oracles` can branch over futures.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .exceptions import ActionOutOfRangeError, EpisodeDoneError

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.99


@dataclass(frozen=True)
class EnvSpec:
    num_agents: int
    obs_dim: int
    num_actions: int
    horizon: int
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.num_agents < 2:
            raise ValueError(f"need at least 2 agents, got {self.num_agents}")
        if self.num_actions < 2:
            raise ValueError(f"need at least 2 actions, got {self.num_actions}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass
class StepResult:
    """
    Outcome of one joint step.

    Attributes
    ----------
    observations : numpy.ndarray
        [M×obs_dim], one row per agent slot.
    reward : float
        Shared by every agent.
    done : bool
    state : dict
        JSON-friendly snapshot of the global state, for debugging.
    """
    observations: np.ndarray
    reward: float
    done: bool
    state: dict


def _one_hot(index, size):
    out = np.zeros(size)
    if index is not None:
        out[index] = 1.0
    return out


class DecPOMDP:
    """
    Shared machinery for the toy tasks.

    Subclasses provide ``spec``, ``_reset``, ``_transition``, ``observe``,
    ``get_state``, ``set_state`` and ``state_dict``.
    """
    name = None

    def reset(self, seed=0, controlled_slots=None, team_type=0):
        """
        Start an episode.

        Parameters
        ----------
        seed : int
            Determines any random initial configuration.
        controlled_slots : sequence of int, optional
            Slots driven by the learned policy. Defaults to every slot but the
            last.
        team_type : int, optional
            Type the uncontrolled team signals; for the Signal Game, the code
            the controlled agents must play at the final step.

        Returns
        -------
        numpy.ndarray
            [M×obs_dim] initial observations.
        """
        if controlled_slots is None:
            controlled_slots = range(self.spec.num_agents - 1)
        self.seed = int(seed)
        self.controlled_slots = tuple(sorted(int(s) for s in controlled_slots))
        self.team_type = int(team_type)
        self.t = 0
        self.done = False
        self.last_actions = None
        self._reset(np.random.default_rng(self.seed))
        return self.observe()

    def step(self, joint_action):
        """
        Advance one step with every slot's action.

        Raises
        ------
        EpisodeDoneError
            The episode already ended.
        ActionOutOfRangeError
            An action is outside ``[0, num_actions)`` or the joint action has
            the wrong length.
        """
        if self.done:
            raise EpisodeDoneError(f"{self.name}: step() after the episode ended")
        joint = np.asarray(joint_action)
        spec = self.spec
        if joint.shape != (spec.num_agents,):
            raise ActionOutOfRangeError(
                f"expected {spec.num_agents} actions, got shape {joint.shape}")
        bad = (joint < 0) | (joint >= spec.num_actions)
        if bad.any():
            raise ActionOutOfRangeError(
                f"actions {joint[bad].tolist()} outside [0, {spec.num_actions})")
        joint = tuple(int(a) for a in joint)
        reward, terminal = self._transition(joint)
        self.last_actions = joint
        self.t += 1
        self.done = terminal or self.t >= spec.horizon
        return StepResult(observations=self.observe(), reward=float(reward),
                          done=self.done, state=self.state_dict())

    def spawn(self):
        "A fresh environment with the same task parameters."
        return type(self)(**self.task_params(), gamma=self.spec.gamma)

    def _timestep_feature(self):
        return min(self.t, self.spec.horizon - 1) / max(self.spec.horizon - 1, 1)


@dataclass(frozen=True)
class SignalLayout:
    "Observation layout of :class:`SignalGame`."
    num_agents: int
    num_types: int

    @property
    def num_actions(self):
        return self.num_types + 1

    @property
    def noop(self):
        return self.num_types

    @property
    def obs_dim(self):
        return self.num_agents * self.num_actions + 1


class SignalGame(DecPOMDP):
    """
    Remember-the-signal task.

    Uncontrolled teammates of type τ play action τ at t=0 and noop afterwards.
    At t=T-1 the team earns 1 when every controlled agent plays τ. A
    controlled agent that plays anything but noop at 1 <= t <= T-2 ends the
    episode with reward 0, so the code cannot be relayed through the
    previous-action features and has to be recalled from history.

    Each agent observes the one-hot of its own last action, of every other
    slot's last action (in slot order), and t/(T-1).
    """
    name = 'signal'

    def __init__(self, num_agents=3, num_types=5, horizon=4, gamma=DEFAULT_GAMMA):
        self.layout = SignalLayout(num_agents, num_types)
        self.spec = EnvSpec(num_agents=num_agents, obs_dim=self.layout.obs_dim,
                            num_actions=self.layout.num_actions,
                            horizon=horizon, gamma=gamma)
        self.reset()

    def task_params(self):
        return {'num_agents': self.spec.num_agents,
                'num_types': self.layout.num_types,
                'horizon': self.spec.horizon}

    def _reset(self, rng):
        if not 0 <= self.team_type < self.layout.num_types:
            raise ValueError(f"team_type {self.team_type} outside "
                             f"[0, {self.layout.num_types})")

    def _transition(self, joint):
        horizon = self.spec.horizon
        controlled = [joint[s] for s in self.controlled_slots]
        if self.t == horizon - 1:
            return float(all(a == self.team_type for a in controlled)), True
        if self.t >= 1 and any(a != self.layout.noop for a in controlled):
            return 0.0, True
        return 0.0, False

    def observe(self):
        m, n_act = self.spec.num_agents, self.layout.num_actions
        last = self.last_actions
        rows = []
        for i in range(m):
            order = [i] + [j for j in range(m) if j != i]
            parts = [_one_hot(None if last is None else last[j], n_act)
                     for j in order]
            parts.append([self._timestep_feature()])
            rows.append(np.concatenate(parts))
        return np.array(rows)

    def get_state(self):
        return (self.t, self.done, self.team_type, self.controlled_slots,
                self.last_actions)

    def set_state(self, state):
        (self.t, self.done, self.team_type, self.controlled_slots,
         self.last_actions) = state

    def state_dict(self):
        return {'t': self.t, 'team_type': self.team_type,
                'controlled_slots': list(self.controlled_slots),
                'last_actions': None if self.last_actions is None
                else list(self.last_actions)}


# Move indices double as action indices; the listed order is also the default
# tie-break priority of scripted walkers.
UP, DOWN, LEFT, RIGHT, STAY = range(5)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), STAY: (0, 0)}


@dataclass(frozen=True)
class GridLayout:
    "Observation layout of :class:`TypedGoalGridworld`."
    num_agents: int
    num_goals: int
    grid_size: int

    num_actions = len(MOVES)
    other_width = 2 + len(MOVES)

    @property
    def obs_dim(self):
        return (2 + (self.num_agents - 1) * self.other_width
                + 2 * self.num_goals + 1)

    def own_cell(self, obs):
        "(row, col) of the observing agent."
        return (int(round(obs[1] * self.grid_size)),
                int(round(obs[0] * self.grid_size)))

    def goal_cell(self, obs, goal):
        "(row, col) of goal ``goal`` as seen by the observing agent."
        row, col = self.own_cell(obs)
        start = 2 + (self.num_agents - 1) * self.other_width + 2 * goal
        dx, dy = obs[start:start + 2]
        return (row + int(round(dy * self.grid_size)),
                col + int(round(dx * self.grid_size)))


class TypedGoalGridworld(DecPOMDP):
    """
    Cover-all-goals gridworld.

    Goals and start cells are drawn from the reset seed. The team earns +1 and
    the episode ends once every goal cell holds an agent; every other step
    costs ``step_penalty``. Agents see each other only within Chebyshev
    distance ``fov_radius``; outside it the relative position and
    previous-action features are zero.

    Cells are (row, col); "up" decreases the row. Observed positions are
    (x, y) = (col, row) / grid_size.
    """
    name = 'gridworld'

    def __init__(self, num_agents=3, grid_size=5, num_goals=3, horizon=12,
                 fov_radius=2, step_penalty=0.01, gamma=DEFAULT_GAMMA):
        if num_goals + num_agents > grid_size * grid_size:
            raise ValueError("grid too small for the goals and agents")
        self.layout = GridLayout(num_agents, num_goals, grid_size)
        self.fov_radius = fov_radius
        self.step_penalty = step_penalty
        self.spec = EnvSpec(num_agents=num_agents, obs_dim=self.layout.obs_dim,
                            num_actions=GridLayout.num_actions,
                            horizon=horizon, gamma=gamma)
        self.reset()

    def task_params(self):
        return {'num_agents': self.spec.num_agents,
                'grid_size': self.layout.grid_size,
                'num_goals': self.layout.num_goals,
                'horizon': self.spec.horizon,
                'fov_radius': self.fov_radius,
                'step_penalty': self.step_penalty}

    def _reset(self, rng):
        self.goals, self.positions = place_gridworld(
            rng, self.layout.grid_size, self.layout.num_goals,
            self.spec.num_agents)

    def _transition(self, joint):
        size = self.layout.grid_size
        moved = []
        for (row, col), action in zip(self.positions, joint):
            dr, dc = MOVES[action]
            moved.append((min(max(row + dr, 0), size - 1),
                          min(max(col + dc, 0), size - 1)))
        self.positions = tuple(moved)
        occupied = set(self.positions)
        if all(goal in occupied for goal in self.goals):
            return 1.0, True
        return -self.step_penalty, False

    def visible(self, i, j):
        (ri, ci), (rj, cj) = self.positions[i], self.positions[j]
        return max(abs(ri - rj), abs(ci - cj)) <= self.fov_radius

    def observe(self):
        m, size = self.spec.num_agents, self.layout.grid_size
        rows = []
        for i in range(m):
            row, col = self.positions[i]
            parts = [[col / size, row / size]]
            for j in range(m):
                if j == i:
                    continue
                if self.visible(i, j):
                    rj, cj = self.positions[j]
                    parts.append([(cj - col) / size, (rj - row) / size])
                    parts.append(_one_hot(
                        None if self.last_actions is None else self.last_actions[j],
                        len(MOVES)))
                else:
                    parts.append(np.zeros(GridLayout.other_width))
            for goal_row, goal_col in self.goals:
                parts.append([(goal_col - col) / size, (goal_row - row) / size])
            parts.append([self._timestep_feature()])
            rows.append(np.concatenate(parts))
        return np.array(rows)

    def get_state(self):
        return (self.t, self.done, self.goals, self.positions, self.last_actions)

    def set_state(self, state):
        self.t, self.done, self.goals, self.positions, self.last_actions = state

    def state_dict(self):
        return {'t': self.t,
                'goals': [list(g) for g in self.goals],
                'positions': [list(p) for p in self.positions],
                'last_actions': None if self.last_actions is None
                else list(self.last_actions)}


def place_gridworld(rng, grid_size, num_goals, num_agents):
    """
    Seeded placement: one permutation of all cells; the first ``num_goals``
    are goals (in goal-index order), the next ``num_agents`` are start cells.
    """
    cells = rng.permutation(grid_size * grid_size)
    goals = tuple(divmod(int(c), grid_size) for c in cells[:num_goals])
    starts = tuple(divmod(int(c), grid_size)
                   for c in cells[num_goals:num_goals + num_agents])
    return goals, starts


ENVIRONMENTS = {SignalGame.name: SignalGame,
                TypedGoalGridworld.name: TypedGoalGridworld}


def make_env(name, **params):
    """
    Build an environment by registry name ('signal' or 'gridworld').
    """
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; "
                         f"choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**params)


def step_record(t, env, observations, actions, reward):
    """
    One JSON-friendly line of a trajectory dump.
    """
    return {'t': int(t), 'state': env.state_dict(),
            'observations': np.asarray(observations).tolist(),
            'actions': [int(a) for a in actions], 'reward': float(reward)}

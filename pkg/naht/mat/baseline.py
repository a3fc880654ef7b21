"""
Independent PPO baseline.

Each controlled agent acts from its own current observation and flattened
k-step history through one shared MLP, with no conditioning on the other
controlled agents' actions. The value pathway is an MLP over the concatenated
current observations of the controlled subteam (zero-padded to
``max_agents``), or, with ``baseline_critic='local'``, the mean of per-agent
values from each agent's own input.

This is a simplified stand-in for a centralized-critic independent learner;
it has no agent-modeling network.
"""
import logging

import numpy as np

from . import numerics as nx
from .model import (DecodeResult, HistoryBuffer, PolicyEvaluation,
                    categorical_entropy, describe_params, sample_action)
from .exceptions import DimensionError, ObservationMismatchError

logger = logging.getLogger(__name__)


def _init_mlp(store, rng, prefix, fan_in, hidden, fan_out, zero, out_scale):
    for name, (a, b, s) in (('fc1', (fan_in, hidden, 1.0)),
                            ('fc2', (hidden, fan_out, out_scale))):
        w = np.zeros((a, b)) if zero else rng.normal(0.0, s / np.sqrt(a), size=(a, b))
        store.add(f'{prefix}.{name}.weight', w)
        store.add(f'{prefix}.{name}.bias', np.zeros(b))


def _mlp(x, params, prefix):
    h = nx.gelu(nx.linear(x, params[f'{prefix}.fc1.weight'],
                          params[f'{prefix}.fc1.bias']))
    return nx.linear(h, params[f'{prefix}.fc2.weight'], params[f'{prefix}.fc2.bias'])


class IndependentBaseline:
    """
    Parameters
    ----------
    config : ModelConfig
        ``d_model`` is the hidden width; ``n_heads`` and layer counts are
        unused.
    params : ParamStore, optional
    seed : int, optional
    zero : bool, optional
    """
    kind = 'independent_baseline'

    def __init__(self, config, params=None, seed=0, zero=False):
        self.config = config
        if params is None:
            params = self._init(np.random.default_rng(seed), zero)
        self.params = params

    @property
    def input_dim(self):
        c = self.config
        return c.obs_dim + c.k * (c.obs_dim + c.num_actions)

    def _init(self, rng, zero):
        c = self.config
        store = nx.ParamStore()
        _init_mlp(store, rng, 'policy', self.input_dim, c.d_model, c.num_actions,
                  zero, 0.01)
        if c.baseline_critic == 'centralized':
            critic_in = c.max_agents * c.obs_dim
        else:
            critic_in = self.input_dim
        _init_mlp(store, rng, 'value', critic_in, c.d_model, 1, zero, 0.1)
        return store

    def new_history(self, controlled_slots):
        return HistoryBuffer(self.config.k, controlled_slots, self.config.obs_dim)

    def agent_inputs(self, window):
        """
        [N × input_dim]: current observation, then the k past steps from
        newest to oldest as (observation, one-hot action), zero where the
        episode is younger than k.
        """
        c = self.config
        n = window.num_controlled
        if n == 0:
            raise DimensionError("cannot act for zero controlled agents")
        if window.observations.shape[2] != c.obs_dim:
            raise ObservationMismatchError(
                f"model expects obs_dim={c.obs_dim}, got {window.observations.shape[2]}")
        if n > c.max_agents:
            raise DimensionError(f"{n} controlled agents exceed max_agents={c.max_agents}")
        out = np.zeros((n, self.input_dim))
        out[:, :c.obs_dim] = window.observations[:, -1]
        past = min(window.valid_length, c.k)
        step = c.obs_dim + c.num_actions
        for back in range(1, past + 1):
            lo = c.obs_dim + (back - 1) * step
            out[:, lo:lo + c.obs_dim] = window.observations[:, -1 - back]
            acts = window.actions[:, -back]
            out[np.arange(n), lo + c.obs_dim + acts] = 1.0
        return out

    def _value(self, window, inputs):
        c = self.config
        if c.baseline_critic == 'centralized':
            joint = np.zeros((1, c.max_agents * c.obs_dim))
            current = window.observations[:, -1].reshape(-1)
            joint[0, :current.size] = current
            return nx.reshape(_mlp(nx.constant(joint), self.params, 'value'), (1,))
        per_agent = _mlp(inputs, self.params, 'value')
        return nx.reshape(nx.mean(per_agent), (1,))

    def _forward(self, window):
        inputs = nx.constant(self.agent_inputs(window))
        return _mlp(inputs, self.params, 'policy'), self._value(window, inputs)

    def act(self, window, rng, greedy=False):
        logits, value = self._forward(window)
        lsm = nx.log_softmax(logits).value
        actions = [sample_action(row, rng, greedy) for row in lsm]
        rows = np.arange(len(actions))
        decision = DecodeResult(actions=np.array(actions, dtype=np.intp),
                                log_probs=lsm[rows, actions],
                                entropy=np.array([categorical_entropy(r) for r in lsm]),
                                logits=logits.value.copy())
        return decision, value.item()

    def evaluate_actions(self, window, actions):
        actions = np.asarray(actions, dtype=np.intp)
        logits, value = self._forward(window)
        if actions.shape != (logits.shape[0],):
            raise DimensionError(
                f"expected {logits.shape[0]} actions, got shape {actions.shape}")
        lsm = nx.log_softmax(logits)
        plogp = nx.mul(nx.exp(lsm), lsm)
        entropy = nx.scale(nx.reshape(nx.matmul(
            plogp, nx.constant(np.ones((self.config.num_actions, 1)))),
            (logits.shape[0],)), -1.0)
        return PolicyEvaluation(nx.pick(lsm, actions), entropy, value)

    def describe(self):
        return describe_params(self.kind, self.config, self.params)

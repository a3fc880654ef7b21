"""
The multi-agent transformer for N-agent ad hoc teamwork.

The encoder reads one token per (controlled agent, timestep) over the last
``k`` steps plus the current one. A token is the sum of an observation
embedding, an action embedding (a learned placeholder on the current step,
whose action does not exist yet) and a learned positional encoding indexed
by the relative timestep δ. Uncontrolled agents never produce tokens.

A value head reads the mean of the current-step representations. The decoder
produces the controlled agents' actions one at a time in ascending slot
order: position ``i`` sees the start token or the previous agent's action,
plus agent ``i``'s current-step representation, attends causally over earlier
positions and cross-attends to every encoder token.
"""
from collections import deque
from dataclasses import asdict, dataclass
import logging

import numpy as np

from . import numerics as nx
from .exceptions import ConfigError, DimensionError, ObservationMismatchError

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """
    Sizes of the policy network.

    ``max_agents`` is M-1, the largest controlled subteam; the transformer has
    no per-agent parameters, the baseline's centralized critic does.
    """
    obs_dim: int
    num_actions: int
    k: int = 4
    d_model: int = 64
    n_heads: int = 2
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    max_agents: int = 2
    ffn_mult: int = 4
    baseline_critic: str = 'centralized'

    def __post_init__(self):
        if self.obs_dim < 1 or self.num_actions < 2:
            raise ConfigError(f"bad dims obs_dim={self.obs_dim} "
                              f"num_actions={self.num_actions}")
        if self.k < 0:
            raise ConfigError(f"history window k must be >= 0, got {self.k}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by "
                              f"n_heads={self.n_heads}")
        if self.max_agents < 1:
            raise ConfigError(f"max_agents must be >= 1, got {self.max_agents}")
        if self.baseline_critic not in ('centralized', 'local'):
            raise ConfigError(f"baseline_critic must be 'centralized' or 'local', "
                              f"got {self.baseline_critic!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HistoryWindow:
    """
    Immutable view of a :class:`HistoryBuffer` at one timestep.

    Attributes
    ----------
    slots : tuple of int
        Controlled slots, ascending.
    observations : numpy.ndarray
        [N × (v+1) × obs_dim], oldest first; the last entry is the current step.
    actions : numpy.ndarray
        [N × v] integer actions of the v past steps, oldest first.
    """
    slots: tuple
    observations: np.ndarray
    actions: np.ndarray

    @property
    def num_controlled(self):
        return len(self.slots)

    @property
    def valid_length(self):
        return self.actions.shape[1]


class HistoryBuffer:
    """
    Ring of the last ``k`` (observation, action) steps of the controlled
    agents, plus their current observations.

    Only the controlled rows of an observation matrix are ever copied in.
    """
    def __init__(self, k, controlled_slots, obs_dim):
        self.k = k
        self.slots = tuple(sorted(controlled_slots))
        self.obs_dim = obs_dim
        self._past = deque(maxlen=k) if k > 0 else None
        self._current = None

    @property
    def valid_length(self):
        return len(self._past) if self._past is not None else 0

    def observe(self, observations):
        """
        Set the current step from the full [M×obs_dim] observation matrix.
        """
        observations = np.asarray(observations, dtype=np.float64)
        if observations.ndim != 2 or observations.shape[1] != self.obs_dim:
            raise ObservationMismatchError(
                f"expected observations of width {self.obs_dim}, "
                f"got shape {observations.shape}")
        self._current = observations[list(self.slots)].copy()

    def record(self, actions):
        "Push the current step with the actions just taken."
        if self._current is None:
            raise RuntimeError("record() before observe()")
        if self._past is not None:
            self._past.append((self._current, np.asarray(actions, dtype=np.intp)))
        self._current = None

    def window(self):
        if self._current is None:
            raise RuntimeError("window() before observe()")
        past = list(self._past) if self._past is not None else []
        obs = np.stack([o for o, _ in past] + [self._current], axis=1)
        if past:
            acts = np.stack([a for _, a in past], axis=1)
        else:
            acts = np.zeros((len(self.slots), 0), dtype=np.intp)
        return HistoryWindow(self.slots, obs, acts)


@dataclass
class TokenSequence:
    """
    Attributes
    ----------
    tokens : GradNode
        [L×d_model], L = N·(v+1), grouped by slot, oldest step first.
    slots, deltas : numpy.ndarray
        Slot index and relative timestep δ of every token.
    current_index : numpy.ndarray
        Token index of each controlled slot's δ=0 token, in slot order.
    mask : numpy.ndarray
        [L×L] all-ones encoder attention mask.
    """
    tokens: object
    slots: np.ndarray
    deltas: np.ndarray
    current_index: np.ndarray
    mask: np.ndarray


@dataclass
class EncoderOutput:
    reps: object
    current_reps: object
    joint_value: object


@dataclass
class DecodeResult:
    """
    Attributes
    ----------
    actions : numpy.ndarray
        int[N], in controlled-slot order.
    log_probs, entropy : numpy.ndarray
        f64[N], of the distributions the actions were drawn from.
    logits : numpy.ndarray
        [N×|A|] logits each agent's action was drawn from.
    """
    actions: np.ndarray
    log_probs: np.ndarray
    entropy: np.ndarray
    logits: np.ndarray


def _init_linear(store, rng, prefix, fan_in, fan_out, scale=1.0, zero=False):
    w = np.zeros((fan_in, fan_out)) if zero else \
        rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))
    store.add(f'{prefix}.weight', w)
    store.add(f'{prefix}.bias', np.zeros(fan_out))


def _init_norm(store, prefix, d, zero=False):
    store.add(f'{prefix}.gain', np.zeros(d) if zero else np.ones(d))
    store.add(f'{prefix}.bias', np.zeros(d))


def _init_attention(store, rng, prefix, d, zero=False):
    for proj in ('q', 'k', 'v', 'o'):
        w = np.zeros((d, d)) if zero else rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
        store.add(f'{prefix}.w{proj}', w)
        store.add(f'{prefix}.b{proj}', np.zeros(d))


def _init_ffn(store, rng, prefix, d, mult, zero=False):
    _init_linear(store, rng, f'{prefix}.fc1', d, mult * d, zero=zero)
    _init_linear(store, rng, f'{prefix}.fc2', mult * d, d, zero=zero)


def init_params(config, rng, zero=False):
    """
    Build a fresh :class:`~naht.mat.numerics.ParamStore`.

    Parameters
    ----------
    config : ModelConfig
    rng : numpy.random.Generator
    zero : bool, optional
        Every parameter zero; the policy is then uniform and the value 0.
    """
    store = nx.ParamStore()
    d, a = config.d_model, config.num_actions

    def embed(shape, std=0.1):
        return np.zeros(shape) if zero else rng.normal(0.0, std, size=shape)

    store.add('embed.obs', embed((config.obs_dim, d), 1.0 / np.sqrt(config.obs_dim)))
    store.add('embed.action', embed((a, d)))
    store.add('embed.no_action', embed((1, d)))
    store.add('embed.position', embed((config.k + 1, d)))
    for i in range(config.n_layers_enc):
        prefix = f'encoder.{i}'
        _init_norm(store, f'{prefix}.ln1', d, zero)
        _init_attention(store, rng, f'{prefix}.attn', d, zero)
        _init_norm(store, f'{prefix}.ln2', d, zero)
        _init_ffn(store, rng, f'{prefix}.ffn', d, config.ffn_mult, zero)
    _init_norm(store, 'encoder.ln_f', d, zero)
    _init_linear(store, rng, 'value.fc1', d, d, zero=zero)
    _init_linear(store, rng, 'value.fc2', d, 1, scale=0.1, zero=zero)

    store.add('decoder.sos', embed((1, d)))
    store.add('decoder.action', embed((a, d)))
    for i in range(config.n_layers_dec):
        prefix = f'decoder.{i}'
        _init_norm(store, f'{prefix}.ln1', d, zero)
        _init_attention(store, rng, f'{prefix}.self_attn', d, zero)
        _init_norm(store, f'{prefix}.ln2', d, zero)
        _init_attention(store, rng, f'{prefix}.cross_attn', d, zero)
        _init_norm(store, f'{prefix}.ln3', d, zero)
        _init_ffn(store, rng, f'{prefix}.ffn', d, config.ffn_mult, zero)
    _init_norm(store, 'decoder.ln_f', d, zero)
    _init_linear(store, rng, 'decoder.head', d, a, scale=0.01, zero=zero)
    return store


def _one_hot_rows(indices, width):
    out = np.zeros((len(indices), width))
    for row, index in enumerate(indices):
        if index is not None:
            out[row, index] = 1.0
    return out


def _norm(x, params, prefix):
    return nx.layer_norm(x, params[f'{prefix}.gain'], params[f'{prefix}.bias'])


def _dense(x, params, prefix):
    return nx.linear(x, params[f'{prefix}.weight'], params[f'{prefix}.bias'])


def _ffn(x, params, prefix):
    return _dense(nx.gelu(_dense(x, params, f'{prefix}.fc1')), params, f'{prefix}.fc2')


def _attention(q, kv, mask, params, prefix, n_heads):
    return nx.multi_head_attention(q, kv, mask, params.group(prefix), n_heads)


def build_tokens(window, config, params):
    """
    Embed a history window into encoder tokens.

    Raises
    ------
    DimensionError
        No controlled agents.
    ObservationMismatchError
        Observation width differs from ``config.obs_dim``.
    """
    n = window.num_controlled
    if n == 0:
        raise DimensionError("cannot build tokens for zero controlled agents")
    obs = window.observations
    if obs.shape[2] != config.obs_dim:
        raise ObservationMismatchError(
            f"model expects obs_dim={config.obs_dim}, got {obs.shape[2]}")
    v = min(window.valid_length, config.k)
    obs = obs[:, obs.shape[1] - (v + 1):]
    acts = window.actions[:, window.actions.shape[1] - v:]
    steps = v + 1

    deltas = np.tile(np.arange(v, -1, -1), n)
    slots = np.repeat(np.asarray(window.slots), steps)
    action_index = [None if j == v else int(acts[i, j])
                    for i in range(n) for j in range(steps)]
    current = (deltas == 0).astype(np.float64)[:, None]

    tokens = nx.add_n([
        nx.matmul(nx.constant(obs.reshape(n * steps, config.obs_dim)),
                  params['embed.obs']),
        nx.matmul(nx.constant(_one_hot_rows(action_index, config.num_actions)),
                  params['embed.action']),
        nx.matmul(nx.constant(current), params['embed.no_action']),
        nx.matmul(nx.constant(_one_hot_rows(deltas, config.k + 1)),
                  params['embed.position']),
    ])
    length = n * steps
    return TokenSequence(tokens=tokens, slots=slots, deltas=deltas,
                         current_index=np.arange(steps - 1, length, steps),
                         mask=np.ones((length, length)))


def encode(tokens, params, config):
    """
    Run the encoder and the joint value head.
    """
    x = tokens.tokens
    for i in range(config.n_layers_enc):
        prefix = f'encoder.{i}'
        h = _norm(x, params, f'{prefix}.ln1')
        x = nx.add(x, _attention(h, h, tokens.mask, params, f'{prefix}.attn',
                                 config.n_heads))
        x = nx.add(x, _ffn(_norm(x, params, f'{prefix}.ln2'), params, f'{prefix}.ffn'))
    reps = _norm(x, params, 'encoder.ln_f')
    current = nx.take_rows(reps, tokens.current_index)
    pooled = nx.mean(current, axis=0, keepdims=True)
    hidden = nx.gelu(_dense(pooled, params, 'value.fc1'))
    value = nx.reshape(_dense(hidden, params, 'value.fc2'), (1,))
    return EncoderOutput(reps=reps, current_reps=current, joint_value=value)


def decoder_logits(enc, previous_actions, length, params, config):
    """
    Logits of the first ``length`` agents given the actions of the first
    ``length - 1``.

    Returns
    -------
    GradNode
        [length × |A|]
    """
    prev = [None] + [int(a) for a in previous_actions[:length - 1]]
    sos = np.zeros((length, 1))
    sos[0, 0] = 1.0
    x = nx.add_n([
        nx.matmul(nx.constant(_one_hot_rows(prev, config.num_actions)),
                  params['decoder.action']),
        nx.matmul(nx.constant(sos), params['decoder.sos']),
        nx.take_rows(enc.current_reps, np.arange(length)),
    ])
    causal = np.tril(np.ones((length, length)))
    full = np.ones((length, enc.reps.shape[0]))
    for i in range(config.n_layers_dec):
        prefix = f'decoder.{i}'
        h = _norm(x, params, f'{prefix}.ln1')
        x = nx.add(x, _attention(h, h, causal, params, f'{prefix}.self_attn',
                                 config.n_heads))
        h = _norm(x, params, f'{prefix}.ln2')
        x = nx.add(x, _attention(h, enc.reps, full, params, f'{prefix}.cross_attn',
                                 config.n_heads))
        x = nx.add(x, _ffn(_norm(x, params, f'{prefix}.ln3'), params, f'{prefix}.ffn'))
    return _dense(_norm(x, params, 'decoder.ln_f'), params, 'decoder.head')


def sample_action(log_probs, rng, greedy=False):
    """
    Draw from a categorical given its log-probabilities; greedy mode takes the
    argmax, lowest index on ties.
    """
    if greedy:
        return int(np.argmax(log_probs))
    cdf = np.cumsum(np.exp(log_probs))
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side='right'))
    return min(index, len(log_probs) - 1)


def categorical_entropy(log_probs):
    return float(-(np.exp(log_probs) * log_probs).sum())


def decode_autoregressive(enc, params, config, rng, greedy=False):
    """
    Decode the controlled agents' actions one at a time.

    Parameters
    ----------
    enc : EncoderOutput
    params : ParamStore
    config : ModelConfig
    rng : numpy.random.Generator
    greedy : bool, optional

    Returns
    -------
    DecodeResult
    """
    n = enc.current_reps.shape[0]
    actions, log_probs, entropy, logits = [], [], [], []
    for i in range(n):
        row = decoder_logits(enc, actions, i + 1, params, config).value[i]
        lsm = row - row.max()
        lsm = lsm - np.log(np.exp(lsm).sum())
        action = sample_action(lsm, rng, greedy)
        actions.append(action)
        log_probs.append(lsm[action])
        entropy.append(categorical_entropy(lsm))
        logits.append(row)
    return DecodeResult(actions=np.array(actions, dtype=np.intp),
                        log_probs=np.array(log_probs), entropy=np.array(entropy),
                        logits=np.array(logits))


def decode_teacher_forced(enc, actions, params, config):
    """
    Log-probabilities and entropies of given actions under the same
    sequential computation as :func:`decode_autoregressive`.

    Returns
    -------
    (GradNode, GradNode)
        Per-agent log-probabilities and entropies, each [N].
    """
    actions = np.asarray(actions, dtype=np.intp)
    n = enc.current_reps.shape[0]
    if actions.shape != (n,):
        raise DimensionError(f"expected {n} actions, got shape {actions.shape}")
    if ((actions < 0) | (actions >= config.num_actions)).any():
        raise ValueError(f"actions {actions.tolist()} outside [0, {config.num_actions})")
    lsm = nx.log_softmax(decoder_logits(enc, actions, n, params, config))
    log_probs = nx.pick(lsm, actions)
    plogp = nx.mul(nx.exp(lsm), lsm)
    entropy = nx.scale(nx.reshape(
        nx.matmul(plogp, nx.constant(np.ones((config.num_actions, 1)))), (n,)), -1.0)
    return log_probs, entropy


@dataclass
class PolicyEvaluation:
    "Differentiable outputs for stored actions."
    log_probs: object
    entropy: object
    value: object


class MATNAHT:
    """
    Centralized history-conditioned policy and joint value for a controlled
    subteam of any size 1..max_agents.

    Parameters
    ----------
    config : ModelConfig
    params : ParamStore, optional
        Fresh parameters from ``seed`` when omitted.
    seed : int, optional
    zero : bool, optional
        Initialize every parameter to zero.
    """
    kind = 'mat_naht'

    def __init__(self, config, params=None, seed=0, zero=False):
        self.config = config
        self.params = params if params is not None else \
            init_params(config, np.random.default_rng(seed), zero=zero)

    def new_history(self, controlled_slots):
        return HistoryBuffer(self.config.k, controlled_slots, self.config.obs_dim)

    def encode_window(self, window):
        return encode(build_tokens(window, self.config, self.params),
                      self.params, self.config)

    def act(self, window, rng, greedy=False):
        """
        Returns
        -------
        (DecodeResult, float)
            The decoded actions and the joint value estimate.
        """
        enc = self.encode_window(window)
        decision = decode_autoregressive(enc, self.params, self.config, rng, greedy)
        return decision, enc.joint_value.item()

    def evaluate_actions(self, window, actions):
        enc = self.encode_window(window)
        log_probs, entropy = decode_teacher_forced(enc, actions, self.params,
                                                   self.config)
        return PolicyEvaluation(log_probs, entropy, enc.joint_value)

    def describe(self):
        return describe_params(self.kind, self.config, self.params)


def describe_params(kind, config, params):
    """
    Human-readable table of parameter names, shapes and counts.
    """
    lines = [f"{kind}: " + ', '.join(f'{k}={v}' for k, v in config.to_dict().items())]
    width = max(len(name) for name in params)
    block, block_total = None, 0
    totals = []
    for name in params:
        head = name.split('.')[0] if not name.split('.')[1].isdigit() \
            else '.'.join(name.split('.')[:2])
        if head != block:
            if block is not None:
                totals.append((block, block_total))
            block, block_total = head, 0
        value = params[name].value
        block_total += value.size
        lines.append(f"  {name:<{width}}  {str(value.shape):<12} {value.size:>8}")
    totals.append((block, block_total))
    lines.append("blocks:")
    lines.extend(f"  {name:<{width}}  {count:>8}" for name, count in totals)
    lines.append(f"total parameters: {params.num_parameters()}")
    return '\n'.join(lines)

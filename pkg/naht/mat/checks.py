"""
Property suite run by ``naht-mat check``.

Each check builds its own small problem from a seed and returns a
:class:`CheckResult`; nothing here depends on a trained model.
"""
from dataclasses import dataclass
from itertools import combinations, product
import logging

import numpy as np
from scipy import stats

from . import numerics as nx
from .envs import SignalGame
from .model import (MATNAHT, ModelConfig, build_tokens, decode_teacher_forced,
                    decoder_logits, encode)
from .oracles import oracle_memoryless_return, oracle_optimal_return
from .rollout import RolloutBuffer, run_episode
from .sampler import sample_composition
from .teammates import build_pools, zero_noise
from .training import PPOConfig, compute_gae, gae_direct_sum, gae_recursive, ppo_loss

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _small_policy(env, k=2, d_model=16, seed=0):
    config = ModelConfig(obs_dim=env.spec.obs_dim, num_actions=env.spec.num_actions,
                         k=k, d_model=d_model, n_heads=2, n_layers_enc=2,
                         n_layers_dec=2, max_agents=env.spec.num_agents - 1)
    return MATNAHT(config, seed=seed)


def _signal_setup(seed=0, num_agents=3):
    env = SignalGame(num_agents=num_agents, num_types=5, horizon=4)
    train, _ = build_pools('signal', env.task_params(), seed=seed)
    return env, train


def _episode_batch(policy, env, pool, rng, n_episodes=2, num_controlled=2):
    episodes = []
    while len(episodes) < n_episodes:
        comp = sample_composition(env.spec.num_agents, pool, rng)
        if comp.num_controlled == num_controlled:
            episodes.append(run_episode(policy, env.spawn(), comp))
    buffer = RolloutBuffer(episodes)
    compute_gae(buffer, 0.99, 0.95)
    return buffer


def check_gradients(seed=0, n_coords=200, tol=1e-3):
    "Full PPO loss of a small model against central differences."
    env, pool = _signal_setup(seed)
    policy = _small_policy(env, seed=seed)
    rng = np.random.default_rng(seed)
    buffer = _episode_batch(policy, env, pool, rng)
    config = PPOConfig()
    report = nx.finite_diff_check(
        lambda store: ppo_loss(policy, buffer.episodes, config).total,
        policy.params, n_coords=n_coords, h=1e-5, tol=tol, rng=rng)
    return CheckResult('gradients', report.passed,
                       f"max_rel_error={report.max_rel_error:.2e} over "
                       f"{report.n_coords} coordinates (worst {report.worst_name})")


def _forward_signature(policy, observations, slots, actions):
    "Outputs, loss and gradients of one step after ``k`` history steps."
    history = policy.new_history(slots)
    for t in range(len(observations) - 1):
        history.observe(observations[t])
        history.record(actions[t][list(slots)])
    history.observe(observations[-1])
    window = history.window()
    n = len(slots)
    chosen = np.arange(n) % policy.config.num_actions
    ev = policy.evaluate_actions(window, chosen)
    loss = nx.add_n([nx.sum_all(ev.log_probs), nx.sum_all(ev.entropy), ev.value])
    policy.params.zero_grad()
    nx.backward(loss)
    grads = np.concatenate([policy.params[n_].grad.reshape(-1) for n_ in policy.params])
    return np.concatenate([ev.log_probs.value, ev.entropy.value, ev.value.value, grads])


def check_masking(seed=0, perturbations=100):
    """
    Perturbing uncontrolled agents' observations and actions leaves outputs,
    loss and gradients bit-identical.
    """
    env, _ = _signal_setup(seed, num_agents=4)
    policy = _small_policy(env, seed=seed)
    rng = np.random.default_rng(seed)
    slots = (0, 2)
    steps = 4
    obs = rng.normal(size=(steps, env.spec.num_agents, env.spec.obs_dim))
    acts = rng.integers(env.spec.num_actions, size=(steps, env.spec.num_agents))
    reference = _forward_signature(policy, obs, slots, acts)
    uncontrolled = [s for s in range(env.spec.num_agents) if s not in slots]
    for _ in range(perturbations):
        o, a = obs.copy(), acts.copy()
        o[:, uncontrolled] = rng.normal(size=o[:, uncontrolled].shape)
        a[:, uncontrolled] = rng.integers(env.spec.num_actions, size=a[:, uncontrolled].shape)
        if not np.array_equal(reference, _forward_signature(policy, o, slots, a)):
            return CheckResult('masking', False,
                               "outputs changed with uncontrolled-agent data")
    return CheckResult('masking', True, f"{perturbations} perturbations bit-identical")


def check_history_window(seed=0, perturbations=20):
    "Data older than k steps does not reach the outputs."
    env, _ = _signal_setup(seed)
    policy = _small_policy(env, k=2, seed=seed)
    rng = np.random.default_rng(seed)
    slots = (0, 1)
    steps = 6
    obs = rng.normal(size=(steps, env.spec.num_agents, env.spec.obs_dim))
    acts = rng.integers(env.spec.num_actions, size=(steps, env.spec.num_agents))
    reference = _forward_signature(policy, obs, slots, acts)
    stale = steps - 1 - policy.config.k
    for _ in range(perturbations):
        o, a = obs.copy(), acts.copy()
        o[:stale] = rng.normal(size=o[:stale].shape)
        a[:stale] = rng.integers(env.spec.num_actions, size=a[:stale].shape)
        if not np.array_equal(reference, _forward_signature(policy, o, slots, a)):
            return CheckResult('history_window', False, "stale history changed outputs")
    return CheckResult('history_window', True,
                       f"{perturbations} perturbations older than k bit-identical")


def check_decoder(seed=0, perturbations=50):
    """
    Agent i's logits ignore later agents' actions (N=3), and the joint
    distribution of N=2 agents over |A|=3 actions sums to one.
    """
    rng = np.random.default_rng(seed)
    config = ModelConfig(obs_dim=5, num_actions=4, k=1, d_model=16, n_heads=2,
                         max_agents=3)
    policy = MATNAHT(config, seed=seed)
    history = policy.new_history((0, 1, 2))
    history.observe(rng.normal(size=(4, 5)))
    enc = encode(build_tokens(history.window(), config, policy.params),
                 policy.params, config)
    actions = rng.integers(4, size=3)
    reference = decoder_logits(enc, actions, 3, policy.params, config).value
    for _ in range(perturbations):
        for i in range(3):
            changed = actions.copy()
            changed[i:] = rng.integers(4, size=3 - i)
            logits = decoder_logits(enc, changed, 3, policy.params, config).value
            if not np.array_equal(logits[:i + 1], reference[:i + 1]):
                return CheckResult('decoder', False,
                                   f"agent {i} logits depend on a later action")

    config2 = ModelConfig(obs_dim=5, num_actions=3, k=0, d_model=16, n_heads=2,
                          max_agents=2)
    policy2 = MATNAHT(config2, seed=seed)
    history2 = policy2.new_history((0, 1))
    history2.observe(rng.normal(size=(3, 5)))
    enc2 = encode(build_tokens(history2.window(), config2, policy2.params),
                  policy2.params, config2)
    total = sum(np.exp(decode_teacher_forced(enc2, np.array(joint), policy2.params,
                                             config2)[0].value.sum())
                for joint in product(range(3), repeat=2))
    ok = abs(total - 1.0) <= 1e-6
    return CheckResult('decoder', ok,
                       f"causal over {perturbations} perturbations; "
                       f"joint mass={total:.12f}")


def check_sampler(seed=0, draws=10 ** 6, num_agents=4):
    """
    N is uniform on 1..M-1 (frequency band and chi-square); the teammate
    instance is uniform over the pool and the slot subset is uniform given N
    (chi-square each).
    """
    env, pool = _signal_setup(seed, num_agents=num_agents)
    rng = np.random.default_rng(seed)
    index = {id(inst): i for i, inst in enumerate(pool.instances)}
    counts = np.zeros(num_agents - 1)
    instance_counts = np.zeros(len(pool))
    subsets = {n: dict.fromkeys(combinations(range(num_agents), n), 0)
               for n in range(1, num_agents)}
    for _ in range(draws):
        comp = sample_composition(num_agents, pool, rng)
        counts[comp.num_controlled - 1] += 1
        instance_counts[index[id(comp.teammate_instance)]] += 1
        subsets[comp.num_controlled][comp.controlled_slots] += 1
    freqs = counts / draws
    expected = 1.0 / (num_agents - 1)
    p_values = {'N': float(stats.chisquare(counts).pvalue),
                'instance': float(stats.chisquare(instance_counts).pvalue)}
    for n, table in subsets.items():
        if len(table) > 1:
            p_values[f'slots{n}'] = float(stats.chisquare(list(table.values())).pvalue)
    # one threshold for the whole family of tests
    alpha = 1e-3 / len(p_values)
    ok = (bool(np.all(np.abs(freqs - expected) <= 0.01))
          and all(p > alpha for p in p_values.values()))
    detail = ' '.join(f"p_{name}={p:.3g}" for name, p in p_values.items())
    return CheckResult('sampler', ok,
                       f"frequencies={np.round(freqs, 4).tolist()} {detail}")


def check_gae(seed=0, episodes=1000, max_len=16):
    "Recursive GAE equals the direct-sum definition."
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(episodes):
        n = int(rng.integers(1, max_len + 1))
        rewards, values = rng.normal(size=n), rng.normal(size=n)
        dones = np.zeros(n, dtype=bool)
        dones[-1] = True
        gamma, lam = float(rng.uniform()), float(rng.uniform())
        gap = np.abs(gae_recursive(rewards, values, dones, gamma, lam)
                     - gae_direct_sum(rewards, values, dones, gamma, lam)).max()
        worst = max(worst, float(gap))
    return CheckResult('gae', worst <= 1e-12, f"max gap {worst:.2e} over {episodes} episodes")


def check_oracles():
    "Signal game: history-dependent optimum 1.0, memoryless optimum 1/num_types."
    env = SignalGame(num_agents=3, num_types=5, horizon=4)
    train, _ = build_pools('signal', env.task_params(), instances_per_family_train=1,
                           instances_per_family_test=1)
    teammates = [zero_noise(inst) for inst in train.instances]
    optimal = oracle_optimal_return(env, teammates)
    memoryless = oracle_memoryless_return(env, teammates)
    ok = abs(optimal - 1.0) <= 1e-12 and abs(memoryless - 0.2) <= 1e-12
    return CheckResult('oracles', ok, f"optimal={optimal:.12f} memoryless={memoryless:.12f}")


CHECKS = (check_gradients, check_masking, check_history_window, check_decoder,
          check_sampler, check_gae, check_oracles)


def run_checks(seed=0, sampler_draws=10 ** 6):
    """
    Run every check; failures are reported, not raised.

    Returns
    -------
    list of CheckResult
    """
    results = []
    for check in CHECKS:
        kwargs = {}
        if check is check_sampler:
            kwargs['draws'] = sampler_draws
        if check is not check_oracles:
            kwargs['seed'] = seed
        try:
            result = check(**kwargs)
        except Exception as err:
            result = CheckResult(check.__name__[len('check_'):], False,
                                 f"{type(err).__name__}: {err}")
        logger.info("check name=%s passed=%s %s", result.name, result.passed,
                    result.detail)
        results.append(result)
    return results

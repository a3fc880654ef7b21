"""
PPO with generalized advantage estimation over per-episode team compositions.

Rollouts store only controlled-agent data: the history windows the policy
acted on, its actions, their log-probabilities and the joint value. During
the update the policy re-encodes every stored window (teacher forcing), so
no encoder output is cached across parameter changes.
"""
from dataclasses import asdict, dataclass
import json
import logging
import time

import event_model
import numpy as np

from . import numerics as nx
from .checkpoint import capture
from .evaluation import evaluate
from .exceptions import ConfigError, GAEMismatchError, NonFiniteLossError
from .rollout import RolloutBuffer, run_episodes
from .sampler import controlled_count_histogram, sample_composition

logger = logging.getLogger(__name__)

ADVANTAGE_STD_GUARD = 1e-8
GAE_TOLERANCE = 1e-12

# metrics fields that hold mappings; they travel as JSON strings in events
JSON_FIELDS = ('N_histogram', 'per_family_test_return')
METRIC_FIELDS = ('iteration', 'env_steps', 'wall_ms', 'mean_train_return',
                 'mean_test_return', 'per_family_test_return', 'policy_loss',
                 'value_loss', 'entropy', 'N_histogram', 'seed', 'variant',
                 'rollout_return', 'approx_kl', 'clip_fraction',
                 'max_ratio_deviation')


@dataclass
class PPOConfig:
    """
    Attributes
    ----------
    gamma, gae_lambda : float
        Discount and GAE λ, both in [0, 1].
    clip : float
        Ratio clip ε > 0.
    epochs : int
        Passes over each rollout batch.
    minibatch_episodes : int
        Minibatch size, in whole episodes.
    value_coef, entropy_coef : float
    max_grad_norm : float
    lr : float
        Adam step size.
    batch_episodes : int
        Episodes per rollout batch.
    total_env_steps : int
        Training stops once this many joint env steps were collected.
    eval_interval : int
        Evaluate on both pools every this many iterations (and after the last).
    check_gae : bool
        Compare recursive GAE with the direct-sum definition on every episode.
    """
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_episodes: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    lr: float = 3e-4
    batch_episodes: int = 32
    total_env_steps: int = 300_000
    eval_interval: int = 10
    check_gae: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gamma={self.gamma} and gae_lambda={self.gae_lambda} "
                              "must lie in [0, 1]")
        if self.clip <= 0.0:
            raise ConfigError(f"clip must be > 0, got {self.clip}")
        for name in ('epochs', 'minibatch_episodes', 'batch_episodes', 'eval_interval'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.total_env_steps < 0:
            raise ConfigError(f"total_env_steps must be >= 0, got {self.total_env_steps}")
        if self.lr <= 0.0 or self.max_grad_norm <= 0.0:
            raise ConfigError(f"lr={self.lr} and max_grad_norm={self.max_grad_norm} "
                              "must be > 0")

    def to_dict(self):
        return asdict(self)


def collect_rollouts(policy, pool, env, n_episodes, rng, num_workers=None):
    """
    Sample ``n_episodes`` team compositions from ``pool`` and play them.

    Returns
    -------
    RolloutBuffer
    """
    compositions = [sample_composition(env.spec.num_agents, pool, rng)
                    for _ in range(n_episodes)]
    return RolloutBuffer(run_episodes(policy, env, compositions,
                                      num_workers=num_workers))


# --- advantages ---------------------------------------------------------------


def gae_recursive(rewards, values, dones, gamma, lam):
    "Advantages by the backward recursion; terminal bootstrap value 0."
    n = len(rewards)
    adv = np.zeros(n)
    next_value, next_adv = 0.0, 0.0
    for t in reversed(range(n)):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


def gae_direct_sum(rewards, values, dones, gamma, lam):
    """
    Advantages as Σ_l (γλ)^l δ_{t+l}, summed explicitly up to the first
    terminal step.
    """
    n = len(rewards)
    deltas = np.zeros(n)
    for t in range(n):
        live = 0.0 if dones[t] else 1.0
        bootstrap = values[t + 1] if t + 1 < n else 0.0
        deltas[t] = rewards[t] + gamma * bootstrap * live - values[t]
    adv = np.zeros(n)
    for t in range(n):
        total = 0.0
        for l in range(n - t):
            total += (gamma * lam) ** l * deltas[t + l]
            if dones[t + l]:
                break
        adv[t] = total
    return adv


def compute_gae(buffer, gamma, lam, check=True):
    """
    Fill advantages and return targets of every episode.

    Raw advantages come from the recursion; return targets are raw advantage
    plus value; ``advantages`` are normalized to zero mean and unit standard
    deviation across the whole batch.

    Raises
    ------
    GAEMismatchError
        ``check`` is on and the recursion disagrees with the direct sum.
    """
    for index, ep in enumerate(buffer.episodes):
        rewards, values, dones = ep.rewards, ep.values, ep.dones
        adv = gae_recursive(rewards, values, dones, gamma, lam)
        if check:
            direct = gae_direct_sum(rewards, values, dones, gamma, lam)
            scale = max(1.0, float(np.abs(direct).max(initial=0.0)))
            gap = float(np.abs(adv - direct).max(initial=0.0))
            if gap > GAE_TOLERANCE * scale:
                raise GAEMismatchError(
                    f"episode {index}: recursive and direct-sum advantages "
                    f"differ by {gap:.3e}")
        ep.raw_advantages = adv
        ep.returns = adv + values
    flat = np.concatenate([ep.raw_advantages for ep in buffer.episodes])
    mean = flat.mean()
    std = flat.std() if flat.size > 1 else 0.0
    std = max(std, ADVANTAGE_STD_GUARD)
    for ep in buffer.episodes:
        ep.advantages = (ep.raw_advantages - mean) / std


# --- PPO ----------------------------------------------------------------------


@dataclass
class LossTerms:
    total: object
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    max_ratio_deviation: float


def ppo_loss(policy, episodes, config):
    """
    Clipped-surrogate PPO loss over ``episodes``.

    Each controlled agent at step t gets its own ratio against the shared
    joint advantage of that step; all means run over (t, agent) pairs.
    """
    lo, hi = 1.0 - config.clip, 1.0 + config.clip
    surrogates, entropies, value_errors = [], [], []
    ratios, old_new = [], []
    pairs = 0
    for ep in episodes:
        for step, adv, target in zip(ep.steps, ep.advantages, ep.returns):
            ev = policy.evaluate_actions(step.window, step.actions)
            n = len(step.actions)
            pairs += n
            ratio = nx.exp(nx.sub(ev.log_probs, nx.constant(step.log_probs)))
            advantage = nx.constant(np.full(n, adv))
            clipped = nx.mul(nx.clip(ratio, lo, hi), advantage)
            surrogates.append(nx.sum_all(nx.minimum(nx.mul(ratio, advantage), clipped)))
            entropies.append(nx.sum_all(ev.entropy))
            value_errors.append(nx.square(nx.sub(ev.value, nx.constant([target]))))
            ratios.append(ratio.value)
            old_new.append(step.log_probs - ev.log_probs.value)
    steps = len(value_errors)
    policy_loss = nx.scale(nx.add_n(surrogates), -1.0 / pairs)
    value_loss = nx.scale(nx.add_n(value_errors), 1.0 / steps)
    entropy = nx.scale(nx.add_n(entropies), 1.0 / pairs)
    total = nx.add_n([policy_loss, nx.scale(value_loss, config.value_coef),
                      nx.scale(entropy, -config.entropy_coef)])
    ratios = np.concatenate(ratios)
    return LossTerms(total=total, policy_loss=policy_loss.item(),
                     value_loss=value_loss.item(), entropy=entropy.item(),
                     approx_kl=float(np.concatenate(old_new).mean()),
                     clip_fraction=float(np.mean((ratios < lo) | (ratios > hi))),
                     max_ratio_deviation=float(np.abs(ratios - 1.0).max()))


@dataclass
class UpdateReport:
    """
    Averages over every minibatch of one :func:`ppo_update`, except
    ``max_ratio_deviation``, which is taken on the first minibatch of the
    first epoch (before any parameter change).
    """
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    max_ratio_deviation: float
    grad_norm: float
    num_updates: int


def _diagnostics(terms, params, epoch, minibatch):
    return {'epoch': epoch, 'minibatch': minibatch,
            'total_loss': float(terms.total.value[0]),
            'policy_loss': terms.policy_loss, 'value_loss': terms.value_loss,
            'entropy': terms.entropy,
            'max_ratio_deviation': terms.max_ratio_deviation,
            'non_finite_params': sorted(n for n in params
                                        if not np.isfinite(params[n].value).all())}


def ppo_update(policy, buffer, config, rng):
    """
    Several epochs of clipped-surrogate updates over episode minibatches.

    Raises
    ------
    NonFiniteLossError
        The loss or gradient norm is not finite; ``diagnostics`` describes
        where.
    """
    if any(ep.advantages is None for ep in buffer.episodes):
        raise RuntimeError("compute_gae must run before ppo_update")
    params = policy.params
    sums = {'policy_loss': 0.0, 'value_loss': 0.0, 'entropy': 0.0,
            'approx_kl': 0.0, 'clip_fraction': 0.0, 'grad_norm': 0.0}
    first_deviation = None
    updates = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(buffer))
        for start in range(0, len(order), config.minibatch_episodes):
            batch = [buffer.episodes[i] for i in order[start:start + config.minibatch_episodes]]
            params.zero_grad()
            terms = ppo_loss(policy, batch, config)
            if not np.isfinite(terms.total.value).all():
                raise NonFiniteLossError("non-finite PPO loss",
                                         _diagnostics(terms, params, epoch, start))
            nx.backward(terms.total)
            norm = nx.clip_grad_norm(params, config.max_grad_norm)
            if not np.isfinite(norm):
                diagnostics = _diagnostics(terms, params, epoch, start)
                diagnostics['grad_norm'] = norm
                raise NonFiniteLossError("non-finite gradient norm", diagnostics)
            nx.adam_step(params, lr=config.lr)
            if first_deviation is None:
                first_deviation = terms.max_ratio_deviation
            for key in ('policy_loss', 'value_loss', 'entropy', 'approx_kl',
                        'clip_fraction'):
                sums[key] += getattr(terms, key)
            sums['grad_norm'] += norm
            updates += 1
    means = {key: value / max(updates, 1) for key, value in sums.items()}
    return UpdateReport(max_ratio_deviation=first_deviation or 0.0,
                        num_updates=updates, **means)


# --- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    """
    Attributes
    ----------
    metrics : list of dict
        One record per iteration, iteration 0 being the initial evaluation.
    best : Checkpoint
        Parameters with the highest greedy train-pool return.
    final : Checkpoint
    env_steps : int
    train_report, test_report : EvalReport
        Last evaluation on each pool.
    """
    metrics: list
    best: object
    final: object
    env_steps: int
    train_report: object
    test_report: object


def _metrics_descriptor_keys():
    keys = {}
    for name in METRIC_FIELDS:
        dtype = 'string' if name in JSON_FIELDS or name == 'variant' else 'number'
        keys[name] = {'dtype': dtype, 'shape': [], 'source': 'naht.mat.training'}
    return keys


def _event_data(record):
    return {key: ([json.dumps(record[key], sort_keys=True)] if key in JSON_FIELDS
                  else [record[key]]) for key in METRIC_FIELDS}


def train(policy, env, train_pool, test_pool, config, seed=0, *,
          eval_episodes_per_instance=2, variant=None, run_metadata=None,
          callback=None, record_wall_time=False, num_workers=None):
    """
    Alternate rollouts, GAE and PPO updates until ``config.total_env_steps``.

    Parameters
    ----------
    policy : MATNAHT or IndependentBaseline
    env : DecPOMDP
        Template environment; episodes run on spawned copies.
    train_pool, test_pool : TeammatePool
    config : PPOConfig
    seed : int
    eval_episodes_per_instance : int, optional
        Greedy evaluation budget per pool instance, each evaluation.
    variant : str, optional
        Recorded in every metrics record; defaults to ``policy.kind``.
    run_metadata : dict, optional
        Extra RunStart metadata (config and pools for the serializer).
    callback : callable, optional
        Receives every ``(name, doc)`` of the run's event-model document
        stream, e.g. a :class:`~naht.mat.serializer.Serializer`.
    record_wall_time : bool, optional
        Write elapsed milliseconds into ``wall_ms`` (otherwise 0, which keeps
        metrics files byte-identical across identical runs).
    num_workers : int, optional
        Rollout threads; ``NAHT_MAT_THREADS`` when omitted.

    Returns
    -------
    TrainResult
    """
    variant = variant or policy.kind
    emit = callback or (lambda name, doc: None)
    rollout_ss, update_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    rollout_rng = np.random.default_rng(rollout_ss)
    update_rng = np.random.default_rng(update_ss)
    eval_seed = int(eval_ss.generate_state(1)[0])
    started = time.monotonic()

    metadata = {'variant': variant, 'seed': seed, 'json_fields': list(JSON_FIELDS),
                'ppo': config.to_dict(), 'model': policy.config.to_dict()}
    metadata.update(run_metadata or {})
    run = event_model.compose_run(metadata=metadata)
    emit('start', run.start_doc)
    stream = run.compose_descriptor(data_keys=_metrics_descriptor_keys(),
                                    name='metrics')
    emit('descriptor', stream.descriptor_doc)

    def evaluate_both():
        kwargs = dict(n_episodes_per_instance=eval_episodes_per_instance,
                      seeds=[eval_seed], num_workers=num_workers)
        return (evaluate(policy, train_pool, env, **kwargs),
                evaluate(policy, test_pool, env, **kwargs))

    def ckpt_metadata(iteration, env_steps, train_return):
        return {'kind': policy.kind, 'variant': variant, 'seed': seed,
                'iteration': iteration, 'env_steps': env_steps,
                'mean_train_return': train_return,
                'model': policy.config.to_dict()}

    metrics = []

    def record(iteration, env_steps, rollouts, update, reports):
        train_report, test_report = reports if reports else (None, None)
        rec = {
            'iteration': iteration, 'env_steps': env_steps,
            'wall_ms': (int((time.monotonic() - started) * 1000)
                        if record_wall_time else 0),
            'mean_train_return': train_report.overall.mean if train_report else None,
            'mean_test_return': test_report.overall.mean if test_report else None,
            'per_family_test_return': test_report.family_means() if test_report else None,
            'N_histogram': controlled_count_histogram(rollouts.compositions)
            if rollouts else {},
            'rollout_return': rollouts.mean_return if rollouts else None,
            'seed': seed, 'variant': variant,
        }
        for key in ('policy_loss', 'value_loss', 'entropy', 'approx_kl',
                    'clip_fraction', 'max_ratio_deviation'):
            rec[key] = getattr(update, key) if update else None
        metrics.append(rec)
        emit('event_page', stream.compose_event_page(
            data=_event_data(rec),
            timestamps={key: [time.time()] for key in METRIC_FIELDS},
            seq_num=[iteration + 1]))
        logger.info("variant=%s seed=%d iteration=%d env_steps=%d "
                    "rollout_return=%s train_return=%s test_return=%s",
                    variant, seed, iteration, env_steps, rec['rollout_return'],
                    rec['mean_train_return'], rec['mean_test_return'])

    reports = last_reports = evaluate_both()
    best_return = reports[0].overall.mean
    best = capture(policy.params, ckpt_metadata(0, 0, best_return))
    record(0, 0, None, None, reports)

    env_steps, iteration = 0, 0
    while env_steps < config.total_env_steps:
        iteration += 1
        buffer = collect_rollouts(policy, train_pool, env, config.batch_episodes,
                                  rollout_rng, num_workers=num_workers)
        env_steps += buffer.num_steps
        compute_gae(buffer, config.gamma, config.gae_lambda, check=config.check_gae)
        try:
            update = ppo_update(policy, buffer, config, update_rng)
        except NonFiniteLossError as err:
            err.diagnostics.update(iteration=iteration, env_steps=env_steps,
                                   variant=variant, seed=seed)
            emit('stop', run.compose_stop(exit_status='fail', reason=str(err)))
            raise
        last = env_steps >= config.total_env_steps
        reports = None
        if last or iteration % config.eval_interval == 0:
            reports = last_reports = evaluate_both()
            train_return = reports[0].overall.mean
            if train_return > best_return:
                best_return = train_return
                best = capture(policy.params,
                               ckpt_metadata(iteration, env_steps, train_return))
        record(iteration, env_steps, buffer, update, reports)

    final = capture(policy.params, ckpt_metadata(
        iteration, env_steps, metrics[-1]['mean_train_return']))
    emit('stop', run.compose_stop(exit_status='success'))
    return TrainResult(metrics=metrics, best=best, final=final, env_steps=env_steps,
                       train_report=last_reports[0], test_report=last_reports[1])

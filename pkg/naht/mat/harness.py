"""
Experiment runner: one training run per (variant, seed), the three-variant
ablation, and plot-ready sample-efficiency tables.

Run directory layout::

    <output_dir>/<variant>/seed_<seed>/
        config.yaml  pools.json  metrics.jsonl
        checkpoint_best.h5  checkpoint_final.h5
        eval_train.json  eval_test.json
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import json
import logging
import os
from pathlib import Path

import numpy as np
import pandas as pd

from .baseline import IndependentBaseline
from .checkpoint import read_checkpoint
from .config import VARIANTS
from .evaluation import confidence_interval, evaluate
from .exceptions import CheckpointError, ConfigError, NonFiniteLossError
from .model import MATNAHT, ModelConfig
from .rollout import THREADS_ENV
from .serializer import METRICS_FILE, Serializer
from .teammates import build_pools, load_pools, pools_to_dict
from .training import train

logger = logging.getLogger(__name__)

POLICIES = {MATNAHT.kind: MATNAHT, IndependentBaseline.kind: IndependentBaseline}


def resolve_workers(config):
    "``config.num_workers``, capped by ``NAHT_MAT_THREADS`` when it is set."
    cap = os.environ.get(THREADS_ENV)
    if not cap:
        return config.num_workers
    try:
        return max(1, min(config.num_workers, int(cap)))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={cap!r} is not an integer") from None


def build_policy(config, env, variant=None, seed=0, zero=False):
    """
    A fresh policy for ``variant`` (the config's own by default).
    """
    variant = variant or config.variant
    model_config = config.model_config(env, variant)
    cls = IndependentBaseline if variant == 'independent_baseline' else MATNAHT
    return cls(model_config, seed=seed, zero=zero)


def policy_from_checkpoint(checkpoint):
    """
    Rebuild the policy a checkpoint was written from.

    Raises
    ------
    CheckpointError
        The metadata does not name a known policy kind and model config.
    """
    meta = checkpoint.metadata
    try:
        cls = POLICIES[meta['kind']]
        model_config = ModelConfig(**meta['model'])
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"checkpoint metadata lacks a usable model "
                              f"description: {err}") from err
    policy = cls(model_config, zero=True)
    try:
        policy.params.load(checkpoint.params)
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"checkpoint parameters do not fit "
                              f"{meta['kind']}: {err}") from err
    if checkpoint.optimizer is not None:
        policy.params.load_optimizer_state(checkpoint.optimizer)
    return policy


def load_policy(path):
    return policy_from_checkpoint(read_checkpoint(path))


def make_pools(config, env):
    p = config.pools
    return build_pools(env.name, env.task_params(), num_families=p.num_families,
                       instances_per_family_train=p.instances_per_family_train,
                       instances_per_family_test=p.instances_per_family_test,
                       seed=p.seed, epsilon_max=p.epsilon_max,
                       permute_signals=p.permute_signals)


def run_directory(output_dir, variant, seed):
    return Path(output_dir) / variant / f'seed_{seed}'


@dataclass
class RunResult:
    variant: str
    seed: int
    directory: Path
    train: object


def run_experiment(config, seed, variant=None, pools=None):
    """
    Train one (variant, seed) and archive everything into its run directory.

    Parameters
    ----------
    config : ExperimentConfig
    seed : int
    variant : str, optional
    pools : (TeammatePool, TeammatePool), optional
        Shared pools; built from ``config.pools`` when omitted.

    Returns
    -------
    RunResult

    Raises
    ------
    ConfigError
        The run directory already holds a run.
    NonFiniteLossError
        After writing ``diagnostics.json`` into the run directory.
    """
    variant = variant or config.variant
    env = config.env.build()
    train_pool, test_pool = pools or make_pools(config, env)
    directory = run_directory(config.output_dir, variant, seed)
    if (directory / METRICS_FILE).exists():
        raise ConfigError(f"{directory} already holds a run; choose another --out")
    policy = build_policy(config, env, variant, seed=seed)
    workers = resolve_workers(config)
    logger.info("run variant=%s seed=%d directory=%s parameters=%d workers=%d",
                variant, seed, directory, policy.params.num_parameters(), workers)
    run_config = config.replace(variant=variant, seeds=[seed])
    with Serializer(directory) as serializer:
        try:
            result = train(
                policy, env, train_pool, test_pool, config.ppo, seed=seed,
                eval_episodes_per_instance=config.eval.periodic_episodes_per_instance,
                variant=variant, callback=serializer,
                run_metadata={'config': run_config.to_dict(),
                              'pools': pools_to_dict(train_pool, test_pool)},
                record_wall_time=config.eval.record_wall_time, num_workers=workers)
        except NonFiniteLossError as err:
            serializer.diagnostics(err.diagnostics)
            raise
        serializer.checkpoint('best', result.best)
        serializer.checkpoint('final', result.final)
        for pool in (train_pool, test_pool):
            serializer.report(pool.role, evaluate(
                policy, pool, env, config.eval.episodes_per_instance,
                seeds=config.eval.seeds, greedy=config.eval.greedy,
                num_workers=workers,
                trajectory_sink=serializer.trajectory
                if config.eval.dump_trajectories and pool.role == 'train' else None))
    return RunResult(variant=variant, seed=seed, directory=directory, train=result)


def run_seeds(config, variant=None, pools=None):
    "Run every seed of ``config`` for one variant, sequentially."
    return [run_experiment(config, seed, variant, pools) for seed in config.seeds]


def _run_variant(args):
    config, variant, pools = args
    return [(r.variant, r.seed, str(r.directory)) for r in run_seeds(config, variant, pools)]


def ablate(config, parallel=False):
    """
    Run the three variants with shared pools and seeds, then write
    ``plot_data.csv`` next to the variant directories.

    Parameters
    ----------
    config : ExperimentConfig
    parallel : bool, optional
        One process per variant; each process holds its own state.

    Returns
    -------
    pandas.DataFrame
        The sample-efficiency table.
    """
    env = config.env.build()
    pools = make_pools(config, env)
    jobs = [(config, variant, pools) for variant in VARIANTS]
    if parallel:
        with ProcessPoolExecutor(max_workers=len(jobs)) as executor:
            finished = list(executor.map(_run_variant, jobs))
    else:
        finished = [_run_variant(job) for job in jobs]
    paths = [Path(directory) / METRICS_FILE
             for runs in finished for _, _, directory in runs]
    return emit_plot_data(paths, Path(config.output_dir) / 'plot_data.csv')


def read_metrics(path):
    """
    Load one ``metrics.jsonl`` as a DataFrame.

    Raises
    ------
    ValueError
        The file mixes variants or seeds.
    """
    frame = pd.read_json(path, lines=True)
    for key in ('variant', 'seed'):
        if key not in frame or frame[key].nunique() != 1:
            raise ValueError(f"{path}: expected a single {key}, found "
                             f"{sorted(frame[key].unique()) if key in frame else 'none'}")
    return frame


def emit_plot_data(metrics_paths, out=None, metric='mean_train_return'):
    """
    Sample-efficiency table across seeds, one column group per variant.

    Every stream's evaluated points (rows where ``metric`` is present) are
    aligned to the first stream's ``env_steps`` by nearest match; each grid
    point then gets, per variant, the mean over seeds and its 95% interval.

    Parameters
    ----------
    metrics_paths : sequence of path
    out : path, optional
        Write the table as CSV.
    metric : str, optional

    Returns
    -------
    pandas.DataFrame
        Columns ``env_steps`` then ``<variant>_mean``, ``_ci_low``,
        ``_ci_high``, ``_n_seeds`` and ``_degenerate`` per variant.

    Raises
    ------
    ValueError
        No streams, a stream mixes variants, or the variants were run with
        different seed sets.
    """
    metrics_paths = list(metrics_paths)
    if not metrics_paths:
        raise ValueError("emit_plot_data needs at least one metrics stream")
    streams = {}
    for path in metrics_paths:
        frame = read_metrics(path)
        variant, seed = frame['variant'].iloc[0], int(frame['seed'].iloc[0])
        points = frame[frame[metric].notna()][['env_steps', metric]]
        streams.setdefault(variant, []).append(
            (seed, points.sort_values('env_steps').reset_index(drop=True)))
    seed_sets = {variant: sorted(seed for seed, _ in runs)
                 for variant, runs in streams.items()}
    if len({tuple(s) for s in seed_sets.values()}) != 1:
        raise ValueError(f"variants were run with different seeds: {seed_sets}")

    first = streams[next(iter(streams))][0][1]
    grid = pd.DataFrame({'env_steps': first['env_steps'].drop_duplicates().to_numpy()})
    table = grid.copy()
    for variant, runs in streams.items():
        aligned = []
        for seed, frame in sorted(runs, key=lambda item: item[0]):
            merged = pd.merge_asof(grid, frame, on='env_steps', direction='nearest')
            aligned.append(merged[metric].to_numpy(dtype=np.float64))
        aligned = np.vstack(aligned)
        stats = [confidence_interval(aligned[:, j]) for j in range(aligned.shape[1])]
        table[f'{variant}_mean'] = [m for m, _, _ in stats]
        table[f'{variant}_ci_low'] = [m - h for m, h, _ in stats]
        table[f'{variant}_ci_high'] = [m + h for m, h, _ in stats]
        table[f'{variant}_n_seeds'] = aligned.shape[0]
        table[f'{variant}_degenerate'] = [d for _, _, d in stats]
    if out is not None:
        table.to_csv(out, index=False)
        logger.info("emit_plot_data out=%s rows=%d variants=%s", out, len(table),
                    sorted(streams))
    return table


def evaluate_checkpoint(config, ckpt, pool_role, episodes=None, greedy=True,
                        pools_path=None, out=None, dump_trajectories=False):
    """
    Evaluate a checkpoint on the named pool.

    Parameters
    ----------
    config : ExperimentConfig
    ckpt : path
    pool_role : {'train', 'test'}
    episodes : int, optional
        Episodes per pool instance; ``config.eval.episodes_per_instance`` by
        default.
    greedy : bool, optional
    pools_path : path, optional
        A run's ``pools.json``; pools are rebuilt from the config otherwise.
    out : path, optional
        Directory receiving ``eval_<role>.json`` (and ``trajectories.jsonl``).

    Returns
    -------
    EvalReport
    """
    if pool_role not in ('train', 'test'):
        raise ConfigError(f"pool must be 'train' or 'test', got {pool_role!r}")
    policy = load_policy(ckpt)
    env = config.env.build()
    if pools_path is not None:
        train_pool, test_pool = load_pools(pools_path)
    else:
        train_pool, test_pool = make_pools(config, env)
    pool = train_pool if pool_role == 'train' else test_pool
    episodes = episodes or config.eval.episodes_per_instance
    if out is None:
        return evaluate(policy, pool, env, episodes, seeds=config.eval.seeds,
                        greedy=greedy, num_workers=resolve_workers(config))
    with Serializer(out) as serializer:
        report = evaluate(policy, pool, env, episodes, seeds=config.eval.seeds,
                          greedy=greedy, num_workers=resolve_workers(config),
                          trajectory_sink=serializer.trajectory
                          if dump_trajectories else None)
        serializer.report(pool_role, report)
    return report


def summarize(report):
    "Short multi-line text of an EvalReport."
    def line(label, stats):
        if stats is None:
            return f"  {label:<12} absent"
        flag = ' (degenerate)' if stats.degenerate else ''
        return (f"  {label:<12} {stats.mean:.4f}  95% CI [{stats.ci_low:.4f}, "
                f"{stats.ci_high:.4f}]  episodes={stats.n_episodes}{flag}")

    lines = [f"pool={report.role} greedy={report.greedy} episodes={report.episodes}",
             line('overall', report.overall)]
    lines += [line(f'family {fid}', s) for fid, s in report.per_family.items()]
    lines += [line(f'N={n}', s) for n, s in report.per_n.items()]
    return '\n'.join(lines)


def describe(config, variant=None):
    "Config plus model summary, as text."
    env = config.env.build()
    policy = build_policy(config, env, variant)
    return '\n'.join([config.dumps().rstrip(), '', policy.describe(),
                      json.dumps({'env': env.name, 'obs_dim': env.spec.obs_dim,
                                  'num_actions': env.spec.num_actions,
                                  'num_agents': env.spec.num_agents})])

"""
Evaluation of a policy against a teammate pool, with 95% confidence
intervals over evaluation seeds.

Every evaluation seed draws its own stream of team compositions exactly as in
training. A cell (all episodes, one teammate family, or one controlled-team
size N) is summarized by the mean over seeds of the per-seed mean return;
the interval is mean ± 1.96 · std(ddof=1) / √n_seeds.
"""
from dataclasses import dataclass
import logging
import math

import numpy as np

from .envs import step_record
from .rollout import run_episode, run_episodes
from .sampler import sample_composition

logger = logging.getLogger(__name__)

Z_95 = 1.96
DEFAULT_EVAL_EPISODES = 50
DEFAULT_EVAL_SEEDS = (0, 1, 2, 3, 4)


def confidence_interval(values):
    """
    Normal-approximation 95% interval of the mean of ``values``.

    Returns
    -------
    (float, float, bool)
        Mean, half-width and whether the interval is degenerate (fewer than
        two values, half-width 0).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("confidence interval of no values")
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0, True
    return mean, Z_95 * float(values.std(ddof=1)) / math.sqrt(values.size), False


@dataclass(frozen=True)
class CellStats:
    mean: float
    half_width: float
    n_seeds: int
    n_episodes: int
    degenerate: bool

    @property
    def ci_low(self):
        return self.mean - self.half_width

    @property
    def ci_high(self):
        return self.mean + self.half_width

    def to_dict(self):
        return {'mean': self.mean, 'ci_low': self.ci_low, 'ci_high': self.ci_high,
                'half_width': self.half_width, 'n_seeds': self.n_seeds,
                'n_episodes': self.n_episodes, 'degenerate': self.degenerate}


def cell_stats(returns_by_seed):
    """
    Summarize one cell from ``[[returns of seed 0], [returns of seed 1], ...]``.

    Seeds that never sampled the cell are skipped; ``None`` when no seed did.
    """
    seed_means = [float(np.mean(r)) for r in returns_by_seed if len(r)]
    if not seed_means:
        return None
    mean, half, degenerate = confidence_interval(seed_means)
    return CellStats(mean=mean, half_width=half, n_seeds=len(seed_means),
                     n_episodes=sum(len(r) for r in returns_by_seed),
                     degenerate=degenerate)


@dataclass
class EvalReport:
    """
    Attributes
    ----------
    role : str
        'train' or 'test'.
    greedy : bool
    seeds : list of int
    episodes : int
        Episodes played over all seeds.
    overall : CellStats
    per_family : dict
        family_id -> CellStats, or ``None`` when the family was never sampled.
    per_n : dict
        N -> CellStats or ``None``, for every N in 1..M-1.
    """
    role: str
    greedy: bool
    seeds: list
    episodes: int
    overall: CellStats
    per_family: dict
    per_n: dict

    def family_means(self):
        return {str(fid): None if stats is None else stats.mean
                for fid, stats in self.per_family.items()}

    def to_dict(self):
        def cells(table):
            return {str(key): None if stats is None else stats.to_dict()
                    for key, stats in table.items()}

        return {'role': self.role, 'greedy': self.greedy, 'seeds': list(self.seeds),
                'episodes': self.episodes, 'overall': self.overall.to_dict(),
                'per_family': cells(self.per_family), 'per_N': cells(self.per_n)}


def evaluate(policy, pool, env, n_episodes_per_instance=DEFAULT_EVAL_EPISODES,
             seeds=DEFAULT_EVAL_SEEDS, greedy=True, num_workers=None,
             trajectory_sink=None):
    """
    Play ``n_episodes_per_instance × len(pool)`` episodes per seed against
    ``pool`` and report returns by family and by N.

    Parameters
    ----------
    policy : MATNAHT or IndependentBaseline
    pool : TeammatePool
    env : DecPOMDP
    n_episodes_per_instance : int, optional
    seeds : sequence of int, optional
        One composition stream per seed.
    greedy : bool, optional
        Argmax decoding; sampling when False.
    num_workers : int, optional
    trajectory_sink : callable, optional
        Receives one dict per step (``step_record`` plus ``seed`` and
        ``episode``); episodes then run sequentially.

    Returns
    -------
    EvalReport
    """
    seeds = [int(s) for s in seeds]
    num_agents = env.spec.num_agents
    per_family = {fid: [] for fid in pool.family_ids}
    per_n = {n: [] for n in range(1, num_agents)}
    overall = []
    episodes = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        compositions = [sample_composition(num_agents, pool, rng)
                        for _ in range(n_episodes_per_instance * len(pool))]
        if trajectory_sink is None:
            results = run_episodes(policy, env, compositions, greedy=greedy,
                                   num_workers=num_workers)
        else:
            results = []
            for index, comp in enumerate(compositions):
                def on_step(t, env_, obs, joint, reward, index=index):
                    line = step_record(t, env_, obs, joint, reward)
                    line.update(seed=seed, episode=index)
                    trajectory_sink(line)
                results.append(run_episode(policy, env.spawn(), comp, greedy=greedy,
                                           on_step=on_step))
        by_family = {fid: [] for fid in per_family}
        by_n = {n: [] for n in per_n}
        returns = []
        for comp, ep in zip(compositions, results):
            by_family[comp.teammate_instance.family_id].append(ep.total_return)
            by_n[comp.num_controlled].append(ep.total_return)
            returns.append(ep.total_return)
        for fid, values in by_family.items():
            per_family[fid].append(values)
        for n, values in by_n.items():
            per_n[n].append(values)
        overall.append(returns)
        episodes += len(compositions)
    report = EvalReport(role=pool.role, greedy=greedy, seeds=seeds, episodes=episodes,
                        overall=cell_stats(overall),
                        per_family={fid: cell_stats(v) for fid, v in per_family.items()},
                        per_n={n: cell_stats(v) for n, v in per_n.items()})
    logger.debug("evaluate role=%s episodes=%d mean=%.6f", pool.role, episodes,
                 report.overall.mean)
    return report

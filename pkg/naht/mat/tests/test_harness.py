import json
import math

import numpy as np
import pandas as pd
import pytest

from naht.mat import training
from naht.mat.config import VARIANTS, ExperimentConfig
from naht.mat.evaluation import Z_95, evaluate
from naht.mat.exceptions import CheckpointError, ConfigError, NonFiniteLossError
from naht.mat.harness import (ablate, build_policy, describe, emit_plot_data,
                              evaluate_checkpoint, load_policy, make_pools,
                              read_metrics, resolve_workers, run_directory,
                              run_experiment, summarize)
from naht.mat.rollout import THREADS_ENV
from naht.mat.serializer import METRICS_FILE

TINY = {
    'env': {'name': 'signal', 'num_agents': 3, 'num_types': 5, 'horizon': 4},
    'model': {'k': 2, 'd_model': 16, 'n_layers_enc': 1, 'n_layers_dec': 1},
    'ppo': {'total_env_steps': 24, 'batch_episodes': 4, 'minibatch_episodes': 2,
            'epochs': 1, 'eval_interval': 2},
    'pools': {'instances_per_family_train': 1, 'instances_per_family_test': 1},
    'eval': {'episodes_per_instance': 2, 'seeds': [0, 1],
             'periodic_episodes_per_instance': 1},
    'seeds': [0],
}


@pytest.fixture
def tiny_config(tmp_path):
    return ExperimentConfig.from_dict(dict(TINY, output_dir=str(tmp_path / 'runs')))


def test_run_experiment_layout(tiny_config):
    run = run_experiment(tiny_config, seed=0)
    directory = run_directory(tiny_config.output_dir, 'mat_naht', 0)
    assert run.directory == directory
    names = sorted(p.name for p in directory.iterdir())
    assert names == ['checkpoint_best.h5', 'checkpoint_final.h5', 'config.yaml',
                     'eval_test.json', 'eval_train.json', METRICS_FILE, 'pools.json']
    frame = read_metrics(directory / METRICS_FILE)
    assert len(frame) == len(run.train.metrics)
    saved = ExperimentConfig.from_yaml(directory / 'config.yaml')
    assert saved.seeds == [0] and saved.variant == 'mat_naht'
    report = json.loads((directory / 'eval_test.json').read_text())
    assert report['episodes'] == 2 * 2 * 5


def test_run_directory_is_not_reused(tiny_config):
    run_experiment(tiny_config, seed=0)
    with pytest.raises(ConfigError):
        run_experiment(tiny_config, seed=0)


def test_run_experiment_dumps_train_trajectories(tmp_path):
    data = dict(TINY, output_dir=str(tmp_path / 'runs'))
    data['eval'] = dict(TINY['eval'], dump_trajectories=True)
    config = ExperimentConfig.from_dict(data)
    run = run_experiment(config, seed=0)
    lines = [json.loads(line) for line in
             (run.directory / 'trajectories.jsonl').read_text().splitlines()]
    # 2 episodes per instance, 2 seeds, 5 train instances
    assert len({(line['seed'], line['episode']) for line in lines}) == 2 * 2 * 5
    assert {line['seed'] for line in lines} == {0, 1}
    assert lines[0]['t'] == 0
    assert config.to_dict()['eval']['dump_trajectories'] is True


def test_metrics_are_byte_identical(tmp_path):
    texts = []
    for name in ('a', 'b'):
        config = ExperimentConfig.from_dict(dict(TINY, output_dir=str(tmp_path / name)))
        run = run_experiment(config, seed=5)
        texts.append((run.directory / METRICS_FILE).read_bytes())
    assert texts[0] == texts[1]


def test_non_finite_loss_leaves_diagnostics(tiny_config, monkeypatch):
    def broken(*args):
        raise NonFiniteLossError("non-finite PPO loss", {'epoch': 0})

    monkeypatch.setattr(training, 'ppo_update', broken)
    with pytest.raises(NonFiniteLossError):
        run_experiment(tiny_config, seed=0, variant='independent_baseline')
    directory = run_directory(tiny_config.output_dir, 'independent_baseline', 0)
    diagnostics = json.loads((directory / 'diagnostics.json').read_text())
    assert diagnostics['iteration'] == 1 and diagnostics['variant'] == 'independent_baseline'
    assert not (directory / 'checkpoint_final.h5').exists()


def test_checkpoint_serves_every_team_size(tiny_config):
    run = run_experiment(tiny_config, seed=0, variant='mat_naht_no_history')
    policy = load_policy(run.directory / 'checkpoint_final.h5')
    assert policy.config.k == 0
    report = evaluate_checkpoint(tiny_config, run.directory / 'checkpoint_best.h5',
                                 'test', episodes=4,
                                 pools_path=run.directory / 'pools.json')
    assert sorted(report.per_n) == [1, 2]
    assert all(np.isfinite(report.per_n[n].mean) for n in (1, 2))
    assert 'N=2' in summarize(report)


def test_gridworld_policy_serves_every_team_size():
    config = ExperimentConfig.from_dict({
        'env': {'name': 'gridworld', 'num_agents': 4, 'grid_size': 4, 'num_goals': 2,
                'horizon': 6},
        'model': {'k': 1, 'd_model': 16, 'n_layers_enc': 1, 'n_layers_dec': 1},
        'pools': {'num_families': 2, 'instances_per_family_test': 1}})
    env = config.env.build()
    _, test_pool = make_pools(config, env)
    for variant in VARIANTS:
        report = evaluate(build_policy(config, env, variant), test_pool, env, 6, seeds=[0, 1])
        assert sorted(report.per_n) == [1, 2, 3]
        assert all(np.isfinite(s.mean) for s in report.per_n.values())


def test_evaluate_checkpoint_writes_report(tiny_config, tmp_path):
    run = run_experiment(tiny_config, seed=0)
    out = tmp_path / 'eval'
    evaluate_checkpoint(tiny_config, run.directory / 'checkpoint_final.h5', 'train',
                        out=out, dump_trajectories=True)
    assert (out / 'eval_train.json').exists()
    lines = (out / 'trajectories.jsonl').read_text().splitlines()
    assert json.loads(lines[0])['t'] == 0


def test_evaluate_checkpoint_errors(tiny_config, tmp_path):
    with pytest.raises(CheckpointError):
        evaluate_checkpoint(tiny_config, tmp_path / 'missing.h5', 'test')
    with pytest.raises(ConfigError):
        evaluate_checkpoint(tiny_config, tmp_path / 'missing.h5', 'validation')


def test_resolve_workers(tiny_config, monkeypatch):
    config = tiny_config.replace(num_workers=4)
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_workers(config) == 4
    monkeypatch.setenv(THREADS_ENV, '2')
    assert resolve_workers(config) == 2
    monkeypatch.setenv(THREADS_ENV, 'x')
    with pytest.raises(ConfigError):
        resolve_workers(config)


def test_describe(tiny_config):
    text = describe(tiny_config, 'independent_baseline')
    assert 'independent_baseline:' in text
    assert '"obs_dim": 19' in text


def test_ablate(tiny_config):
    table = ablate(tiny_config)
    for variant in VARIANTS:
        assert (run_directory(tiny_config.output_dir, variant, 0) / METRICS_FILE).exists()
        assert f'{variant}_mean' in table
        assert table[f'{variant}_degenerate'].all()
    saved = pd.read_csv(f'{tiny_config.output_dir}/plot_data.csv')
    assert list(saved.columns) == list(table.columns)


# --- plot data ----------------------------------------------------------------


def _stream(path, variant, seed, points):
    with open(path, 'w') as f:
        for iteration, (steps, value) in enumerate(points):
            f.write(json.dumps({'iteration': iteration, 'env_steps': steps,
                                'mean_train_return': value, 'variant': variant,
                                'seed': seed}) + '\n')
    return path


def test_plot_data_single_seed_is_degenerate(tmp_path):
    path = _stream(tmp_path / 'a.jsonl', 'mat_naht', 0, [(0, 0.1), (10, 0.5)])
    table = emit_plot_data([path])
    assert table['env_steps'].tolist() == [0, 10]
    assert table['mat_naht_degenerate'].all()
    assert (table['mat_naht_ci_low'] == table['mat_naht_mean']).all()
    assert (table['mat_naht_n_seeds'] == 1).all()


def test_plot_data_identical_streams_have_zero_width(tmp_path):
    points = [(0, 0.2), (8, 0.4), (16, 0.9)]
    paths = [_stream(tmp_path / f's{seed}.jsonl', 'mat_naht', seed, points)
             for seed in range(3)]
    table = emit_plot_data(paths)
    assert (table['mat_naht_ci_high'] - table['mat_naht_ci_low'] == 0).all()
    assert not table['mat_naht_degenerate'].any()


def test_plot_data_interval(tmp_path):
    values = [0.1, 0.4, 0.8]
    paths = [_stream(tmp_path / f's{seed}.jsonl', 'mat_naht', seed, [(0, v)])
             for seed, v in enumerate(values)]
    row = emit_plot_data(paths).iloc[0]
    half = Z_95 * np.std(values, ddof=1) / math.sqrt(3)
    assert abs(row['mat_naht_mean'] - np.mean(values)) <= 1e-9
    assert abs(row['mat_naht_ci_high'] - (np.mean(values) + half)) <= 1e-9


def test_plot_data_aligns_by_nearest_step(tmp_path):
    a = _stream(tmp_path / 'a.jsonl', 'mat_naht', 0, [(0, 0.0), (100, 1.0)])
    b = _stream(tmp_path / 'b.jsonl', 'mat_naht', 1, [(0, 0.0), (96, 0.5), (130, 0.7)])
    c = _stream(tmp_path / 'c.jsonl', 'independent_baseline', 0, [(3, 0.2), (104, 0.3)])
    d = _stream(tmp_path / 'd.jsonl', 'independent_baseline', 1, [(0, 0.2), (99, 0.1)])
    out = tmp_path / 'plot.csv'
    table = emit_plot_data([a, b, c, d], out)
    assert table['env_steps'].tolist() == [0, 100]
    assert table['mat_naht_mean'].tolist() == pytest.approx([0.0, 0.75])
    assert table['independent_baseline_mean'].tolist() == pytest.approx([0.2, 0.2])
    assert out.exists()


def test_plot_data_skips_unevaluated_rows(tmp_path):
    path = _stream(tmp_path / 'a.jsonl', 'mat_naht', 0, [(0, 0.1), (4, None), (8, 0.3)])
    assert emit_plot_data([path])['env_steps'].tolist() == [0, 8]


def test_plot_data_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_plot_data([])
    a = _stream(tmp_path / 'a.jsonl', 'mat_naht', 0, [(0, 0.1)])
    b = _stream(tmp_path / 'b.jsonl', 'independent_baseline', 1, [(0, 0.1)])
    with pytest.raises(ValueError):
        emit_plot_data([a, b])
    mixed = tmp_path / 'mixed.jsonl'
    mixed.write_text(a.read_text() + b.read_text())
    with pytest.raises(ValueError):
        emit_plot_data([mixed])


# --- experiment scale -----------------------------------------------------------


@pytest.mark.slow
def test_signal_game_ablation(tmp_path):
    config = ExperimentConfig.from_dict({
        'model': {'k': 3}, 'seeds': [0, 1, 2, 3, 4], 'num_workers': 4,
        'eval': {'episodes_per_instance': 10}, 'output_dir': str(tmp_path)})
    table = ablate(config, parallel=True)
    final = table.iloc[-1]
    assert final['mat_naht_mean'] >= final['independent_baseline_mean'] + 0.05
    assert final['mat_naht_mean'] >= final['mat_naht_no_history_mean'] + 0.4

    solved = 0
    for seed in config.seeds:
        directory = run_directory(tmp_path, 'mat_naht', seed)
        train = json.loads((directory / 'eval_train.json').read_text())
        test = json.loads((directory / 'eval_test.json').read_text())
        solved += train['overall']['mean'] >= 0.9
        for family, cell in test['per_family'].items():
            assert abs(cell['mean'] - train['per_family'][family]['mean']) <= 0.15
        no_history = json.loads((run_directory(tmp_path, 'mat_naht_no_history', seed)
                                 / 'eval_train.json').read_text())
        assert no_history['overall']['mean'] <= 0.35
    assert solved >= 4

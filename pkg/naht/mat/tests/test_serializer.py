import json

import pytest
import suitcase.utils
import yaml

from naht.mat.checkpoint import capture, read_checkpoint
from naht.mat.evaluation import evaluate
from naht.mat.model import MATNAHT
from naht.mat.serializer import METRICS_FILE, Serializer, export
from naht.mat.teammates import pools_to_dict
from naht.mat.training import PPOConfig, train

from .conftest import small_config


def _documents(signal_env, signal_pools, **metadata):
    docs = []
    train(MATNAHT(small_config(signal_env)), signal_env, *signal_pools,
          PPOConfig(total_env_steps=12, batch_episodes=2, eval_interval=1, epochs=1),
          eval_episodes_per_instance=1, run_metadata=metadata,
          callback=lambda name, doc: docs.append((name, doc)))
    return docs


def test_export(tmp_path, signal_env, signal_pools):
    docs = _documents(signal_env, signal_pools, config={'variant': 'mat_naht'},
                      pools=pools_to_dict(*signal_pools))
    artifacts = export(docs, tmp_path / 'run')
    assert sorted(artifacts) == ['config', 'metrics', 'pools']

    lines = (tmp_path / 'run' / METRICS_FILE).read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert len(records) == sum(1 for name, _ in docs if name == 'event_page')
    assert [r['iteration'] for r in records] == list(range(len(records)))
    # mapping fields come back as objects, not strings
    assert isinstance(records[-1]['N_histogram'], dict)
    assert isinstance(records[-1]['per_family_test_return'], dict)
    assert records[0]['policy_loss'] is None
    assert lines[0] == json.dumps(records[0], sort_keys=True)

    config = yaml.safe_load((tmp_path / 'run' / 'config.yaml').read_text())
    assert config == {'variant': 'mat_naht'}
    pools = json.loads((tmp_path / 'run' / 'pools.json').read_text())
    assert len(pools['test']['instances']) == len(signal_pools[1])


def test_export_without_run_files(tmp_path, signal_env, signal_pools):
    artifacts = export(_documents(signal_env, signal_pools), tmp_path)
    assert sorted(artifacts) == ['metrics']


def test_export_to_memory(signal_env, signal_pools):
    manager = suitcase.utils.MemoryBuffersManager()
    artifacts = export(_documents(signal_env, signal_pools), manager)
    assert 'metrics' in artifacts


def test_export_takes_no_options(tmp_path):
    with pytest.raises(TypeError):
        export([], tmp_path, flatten=True)
    assert not any(tmp_path.iterdir())


def test_side_artifacts(tmp_path, small_policy, signal_env, signal_pools):
    report = evaluate(small_policy, signal_pools[1], signal_env, 1, seeds=[0])
    with Serializer(tmp_path) as serializer:
        serializer.checkpoint('best', capture(small_policy.params, {'kind': 'mat_naht'}))
        serializer.report('test', report)
        serializer.trajectory({'t': 0, 'reward': 0.0})
        serializer.trajectory({'t': 1, 'reward': 1.0})
        serializer.diagnostics({'epoch': 0, 'total_loss': float('nan')})
        artifacts = serializer.artifacts
    assert sorted(artifacts) == ['checkpoint', 'diagnostics', 'report', 'trajectories']
    assert read_checkpoint(tmp_path / 'checkpoint_best.h5').metadata == {'kind': 'mat_naht'}
    data = json.loads((tmp_path / 'eval_test.json').read_text())
    assert data['role'] == 'test' and 'per_N' in data
    assert len((tmp_path / 'trajectories.jsonl').read_text().splitlines()) == 2
    assert 'total_loss' in (tmp_path / 'diagnostics.json').read_text()

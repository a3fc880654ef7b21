"""
Experiment configuration.

One YAML document with the sections ``env``, ``model``, ``ppo``, ``pools``
and ``eval`` plus the scalar keys ``seeds``, ``variant``, ``output_dir`` and
``num_workers``::

    env:
      name: signal
      num_agents: 3
      num_types: 5
      horizon: 4
    model:
      k: 3
    ppo:
      total_env_steps: 300000
    seeds: [0, 1, 2, 3, 4]
    variant: mat_naht
    output_dir: runs/signal

Unknown keys anywhere are errors.
"""
from dataclasses import asdict, dataclass, field, fields
import logging
from pathlib import Path

import yaml

from .envs import make_env
from .evaluation import DEFAULT_EVAL_EPISODES, DEFAULT_EVAL_SEEDS
from .exceptions import ConfigError
from .model import ModelConfig
from .teammates import (DEFAULT_EPSILON_MAX, DEFAULT_NUM_FAMILIES,
                        DEFAULT_TEST_PER_FAMILY, DEFAULT_TRAIN_PER_FAMILY)
from .training import PPOConfig

logger = logging.getLogger(__name__)

VARIANTS = ('mat_naht', 'mat_naht_no_history', 'independent_baseline')


@dataclass
class EnvConfig:
    """
    ``name`` selects the task; every other key is passed to its constructor.
    """
    name: str = 'signal'
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(name=d.pop('name', 'signal'), params=d)

    def to_dict(self):
        return {'name': self.name, **self.params}

    def build(self):
        try:
            return make_env(self.name, **self.params)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"env: {err}") from err


@dataclass
class ModelSection:
    "Size settings; observation and action dims come from the environment."
    k: int = 4
    d_model: int = 64
    n_heads: int = 2
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    ffn_mult: int = 4
    baseline_critic: str = 'centralized'


@dataclass
class PoolConfig:
    num_families: int = DEFAULT_NUM_FAMILIES
    instances_per_family_train: int = DEFAULT_TRAIN_PER_FAMILY
    instances_per_family_test: int = DEFAULT_TEST_PER_FAMILY
    seed: int = 0
    epsilon_max: float = DEFAULT_EPSILON_MAX
    permute_signals: bool = True


@dataclass
class EvalConfig:
    """
    Attributes
    ----------
    episodes_per_instance, seeds
        Budget of the final evaluation reports.
    periodic_episodes_per_instance : int
        Budget of the evaluations during training.
    greedy : bool
    record_wall_time : bool
        Fill ``wall_ms`` in metrics records.
    dump_trajectories : bool
        Write the steps of the final train-pool evaluation to
        ``trajectories.jsonl`` in the run directory.
    """
    episodes_per_instance: int = DEFAULT_EVAL_EPISODES
    seeds: list = field(default_factory=lambda: list(DEFAULT_EVAL_SEEDS))
    periodic_episodes_per_instance: int = 2
    greedy: bool = True
    record_wall_time: bool = False
    dump_trajectories: bool = False


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: {err}") from err


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelSection = field(default_factory=ModelSection)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    pools: PoolConfig = field(default_factory=PoolConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: list = field(default_factory=lambda: [0])
    variant: str = 'mat_naht'
    output_dir: str = 'runs'
    num_workers: int = 1

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        env = data.pop('env', None) or {}
        if not isinstance(env, dict):
            raise ConfigError("section 'env' must be a mapping")
        config = cls(env=EnvConfig.from_dict(env),
                     model=_section(ModelSection, data.pop('model', None), 'model'),
                     ppo=_section(PPOConfig, data.pop('ppo', None), 'ppo'),
                     pools=_section(PoolConfig, data.pop('pools', None), 'pools'),
                     eval=_section(EvalConfig, data.pop('eval', None), 'eval'),
                     **data)
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, path):
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"{path} is not valid YAML: {err}") from err
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def validate(self):
        """
        Check everything that can be checked without running: the variant,
        seeds, the environment parameters, the model sizes and the pools.
        """
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError(f"seeds must be a non-empty list of non-negative "
                              f"integers, got {self.seeds!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds {self.seeds}")
        if not isinstance(self.num_workers, int) or self.num_workers < 1:
            raise ConfigError(f"num_workers must be >= 1, got {self.num_workers!r}")
        if self.eval.episodes_per_instance < 1 or self.eval.periodic_episodes_per_instance < 1:
            raise ConfigError("eval episode budgets must be >= 1")
        if not self.eval.seeds:
            raise ConfigError("eval.seeds must not be empty")
        env = self.env.build()
        if self.env.name == 'signal' and self.pools.num_families > env.layout.num_types:
            raise ConfigError(f"pools.num_families={self.pools.num_families} exceeds "
                              f"the signal game's num_types={env.layout.num_types}")
        if min(self.pools.num_families, self.pools.instances_per_family_train,
               self.pools.instances_per_family_test) < 1:
            raise ConfigError("pool counts must be >= 1")
        for variant in VARIANTS:
            self.model_config(env, variant)
        return self

    def model_config(self, env, variant=None):
        "The :class:`~naht.mat.model.ModelConfig` of ``variant`` on ``env``."
        variant = variant or self.variant
        settings = asdict(self.model)
        if variant == 'mat_naht_no_history':
            settings['k'] = 0
        return ModelConfig(obs_dim=env.spec.obs_dim, num_actions=env.spec.num_actions,
                           max_agents=env.spec.num_agents - 1, **settings)

    def replace(self, **overrides):
        "Copy with top-level overrides (``None`` values are ignored), validated."
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_dict(data)

    def to_dict(self):
        return {'env': self.env.to_dict(), 'model': asdict(self.model),
                'ppo': self.ppo.to_dict(), 'pools': asdict(self.pools),
                'eval': asdict(self.eval), 'seeds': list(self.seeds),
                'variant': self.variant, 'output_dir': str(self.output_dir),
                'num_workers': self.num_workers}

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def dump(self, path):
        Path(path).write_text(self.dumps())

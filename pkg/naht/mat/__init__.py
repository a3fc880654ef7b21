# Public API of naht.mat: the policies, the trainer, evaluation and the
# run-directory Serializer.
from .baseline import IndependentBaseline
from .config import ExperimentConfig
from .evaluation import EvalReport, evaluate
from .model import MATNAHT, ModelConfig
from .serializer import Serializer, export
from .training import PPOConfig, train

__version__ = '0.1.0'

__all__ = ['ExperimentConfig', 'EvalReport', 'IndependentBaseline', 'MATNAHT',
           'ModelConfig', 'PPOConfig', 'Serializer', 'evaluate', 'export', 'train',
           '__version__']

"""
``naht-mat`` command line.

Exit codes: 0 success, 1 failed check or training failure, 2 bad
configuration, 3 missing or unreadable checkpoint.
"""
import argparse
import logging
import sys

from . import __version__
from .checks import run_checks
from .config import VARIANTS, ExperimentConfig
from .exceptions import CheckpointError, ConfigError, NahtMatError
from .harness import (ablate, describe, evaluate_checkpoint, run_seeds,
                      summarize)

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


def _load_config(args):
    config = (ExperimentConfig.from_yaml(args.config) if args.config
              else ExperimentConfig())
    seeds = [args.seed] if getattr(args, 'seed', None) is not None else None
    return config.replace(seeds=seeds, variant=getattr(args, 'variant', None),
                          output_dir=getattr(args, 'out', None))


def cmd_train(args):
    config = _load_config(args)
    for run in run_seeds(config):
        logger.info("finished variant=%s seed=%d directory=%s env_steps=%d",
                    run.variant, run.seed, run.directory, run.train.env_steps)
    return 0


def cmd_eval(args):
    if args.dump_trajectories and not args.out:
        raise ConfigError("--dump-trajectories needs --out")
    config = _load_config(args)
    report = evaluate_checkpoint(config, args.ckpt, args.pool, episodes=args.episodes,
                                 greedy=not args.sample, pools_path=args.pools,
                                 out=args.out, dump_trajectories=args.dump_trajectories)
    print(summarize(report))
    return 0


def cmd_ablate(args):
    config = _load_config(args)
    table = ablate(config, parallel=args.parallel)
    print(table.tail(1).to_string(index=False))
    return 0


def cmd_check(args):
    results = run_checks(seed=args.seed or 0, sampler_draws=args.sampler_draws)
    for result in results:
        status = 'PASS' if result.passed else 'FAIL'
        print(f"{status}  {result.name:<15} {result.detail}")
    return 0 if all(r.passed for r in results) else EXIT_FAILURE


def cmd_describe(args):
    print(describe(_load_config(args), args.variant))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog='naht-mat',
        description="History-conditioned multi-agent transformer for N-agent "
                    "ad hoc teamwork: training, evaluation and checks.")
    parser.add_argument('--version', action='version', version=__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p):
        p.add_argument('--config', help="experiment YAML file")
        p.add_argument('--seed', type=int, help="replace the config's seed list")
        return p

    p = with_config(sub.add_parser('train', help="train one variant over the seeds"))
    p.add_argument('--variant', choices=VARIANTS)
    p.add_argument('--out', help="output directory")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser('eval', help="evaluate a checkpoint on a pool"))
    p.add_argument('--ckpt', required=True)
    p.add_argument('--pool', choices=('train', 'test'), default='test')
    p.add_argument('--pools', help="pools.json of the run (default: rebuild)")
    p.add_argument('--episodes', type=int, help="episodes per pool instance")
    p.add_argument('--sample', action='store_true',
                   help="sample actions instead of greedy decoding")
    p.add_argument('--out', help="directory for the report")
    p.add_argument('--dump-trajectories', action='store_true',
                   help="write per-step trajectories.jsonl (needs --out)")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser('ablate', help="run all three variants"))
    p.add_argument('--out', help="output directory")
    p.add_argument('--parallel', action='store_true',
                   help="one process per variant")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('check', help="run the property suite")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--sampler-draws', type=int, default=10 ** 6)
    p.set_defaults(func=cmd_check)

    p = with_config(sub.add_parser('describe', help="print config and model summary"))
    p.add_argument('--variant', choices=VARIANTS)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet \
        else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: '
                                            '%(message)s')
    try:
        return args.func(args)
    except ConfigError as err:
        logger.error("bad configuration: %s", err)
        return EXIT_CONFIG
    except CheckpointError as err:
        logger.error("%s", err)
        return EXIT_CHECKPOINT
    except NahtMatError as err:
        logger.error("%s: %s", type(err).__name__, err)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())

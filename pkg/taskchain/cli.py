"""
Command-line interface:

    taskchain run --profile desk --oracle full --epochs 20 --out results
"""

import argparse
import sys
import sciris as sc
from . import parameters as tcp
from . import orchestrator as tco
from .version import __version__


__all__ = ['make_parser', 'main']


def make_parser():
    """ Argument parser with the run subcommand """
    parser = argparse.ArgumentParser(prog='taskchain', description='Run the intrinsically motivated task-chaining agent')
    parser.add_argument('--version', action='version', version=f'taskchain {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help='run an experiment and write metrics to a folder')
    run.add_argument('--config', default=None, help='JSON file of nested parameter overrides')
    run.add_argument('--profile', default=None, choices=tcp.profiles, help='parameter profile (default: desk, or the one in the config file)')
    run.add_argument('--ablation', default=None, choices=tcp.ablations)
    run.add_argument('--oracle', default=None, choices=tcp.oracles)
    run.add_argument('--controller', default=None, choices=tcp.controllers)
    run.add_argument('--seed', default=None, type=int, help='master seed')
    run.add_argument('--workers', default=None, type=int, help='parallel rollout workers')
    run.add_argument('--epochs', default=None, type=int)
    run.add_argument('--out', default='results', help='output folder (default: results)')
    run.add_argument('--save-rollouts', action='store_true', help='also write rollouts.jsonl')
    run.add_argument('--verbose', default=1, type=int, help='0 silent, 1 per epoch, 2 per rollout')
    return parser


def build_pars(args):
    """ Combine the config file and command-line options into a full parameter tree """
    user = tcp.load_config(args.config) if args.config else {}
    profile = args.profile or user.pop('profile', 'desk')
    user.pop('profile', None)
    run = sc.objdict()
    for key in ['ablation', 'oracle', 'seed', 'workers', 'epochs']:
        val = getattr(args, key)
        if val is not None:
            run[key] = val
    if args.save_rollouts:
        run.save_rollouts = True
    if args.workers is not None:
        run.rollouts = args.workers
    overrides = dict(run=run)
    if args.controller is not None:
        overrides['policy'] = dict(controller=args.controller)
    pars = sc.mergenested(user, overrides)
    return tcp.make_pars(profile, pars=pars)


def main(argv=None):
    """ Entry point of the taskchain console script """
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command == 'run':
        try:
            pars = build_pars(args)
        except (ValueError, OSError) as E:
            parser.error(str(E))
        exp = tco.Experiment(pars=pars, out=args.out, verbose=args.verbose)
        exp.run()
        sc.printv(f'Results saved to {exp.out}', 1, args.verbose)
    return 0


if __name__ == '__main__':
    sys.exit(main())

# SPDX-License-Identifier: Apache-2.0

import argparse
import logging
import sys
from typing import Dict, List, Optional

from benchmarks.functions import FUNCTION_REGISTRY
from benchmarks.utils import parse_float_list, parse_int_list, parse_switch

from .experiment_config import build_experiment_config
from .trials import rank_report_json, report_csv, run_rank_trials, run_trials, write_reports


EXIT_OK = 0
EXIT_TRIALS_FAILED = 1
EXIT_CONFIG_ERROR = 2

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def parse_unknown_args_to_dict(unknown_args: List[str]) -> Dict[str, str]:
    """Parses a list of unknown arguments into a dictionary."""
    parser = argparse.ArgumentParser()

    # Extract argument keys, warning on repeated ones
    seen = set()
    for arg in unknown_args:
        if arg.startswith('--'):
            key = arg.split('=')[0]
            if key in seen:
                logging.warning(f"Duplicate argument '{key}' found. Using the latest value.")
            seen.add(key)

    for key in sorted(seen):
        parser.add_argument(key)

    try:
        parsed_args, _ = parser.parse_known_args(unknown_args)
        return {k: v for k, v in vars(parsed_args).items() if v is not None}
    except (Exception, SystemExit) as e:
        logging.error(f'Error parsing unknown arguments: {e}')
        return {}


def _add_common_arguments(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--function',
        choices=sorted(FUNCTION_REGISTRY),
        default=None,
        help='Benchmark function (default anisotropic6)',
    )
    parser.add_argument('--dim', type=int, default=None, help='Input dimension d')
    parser.add_argument('--trials', type=int, default=None, help='Trials (default 10)')
    parser.add_argument('--seed', type=int, default=None, help='Master seed (default 0)')
    parser.add_argument(
        '--config',
        dest='config_file_path',
        default='',
        help='Path to a YAML or JSON experiment configuration file',
    )
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        default='INFO',
        help='Logging level',
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ttn-approximation',
        description='Learn tree tensor network approximations of benchmark functions',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    approximate = subparsers.add_parser(
        'approximate', help='Run repeated approximation trials and report quantiles'
    )
    _add_common_arguments(approximate)
    approximate.add_argument(
        '--tol',
        type=parse_float_list,
        default=None,
        help='Tolerance or comma-separated list of tolerances, e.g. 1e-2,1e-3',
    )
    approximate.add_argument(
        '--tree',
        default=None,
        help='Tree mode: balanced, rt, rbt, slo or file:PATH (default balanced)',
    )
    approximate.add_argument(
        '--adaptive-pca', type=parse_switch, default=None, help='on or off (default on)'
    )
    approximate.add_argument(
        '--adaptive-basis', type=parse_switch, default=None, help='on or off (default off)'
    )
    approximate.add_argument('--n-test', type=int, default=None, help='Test points per trial')
    approximate.add_argument(
        '--absolute-error',
        action='store_true',
        default=None,
        help='Report the absolute instead of the relative test error',
    )
    approximate.add_argument(
        '--workers', type=int, default=None, help='Threads for same-level nodes'
    )
    approximate.add_argument(
        '--trial-workers', type=int, default=None, help='Trials run concurrently'
    )
    approximate.add_argument('--out', default=None, help='Write a learned model (JSON)')
    approximate.add_argument(
        '--report', default=None, help='Write the quantile CSV here and the JSON report beside it'
    )

    rank = subparsers.add_parser('rank', help='Estimate the coarse alpha-rank of a function')
    _add_common_arguments(rank)
    rank.add_argument(
        '--alpha', type=parse_int_list, required=True, help='Variables of alpha, e.g. 1,2'
    )
    rank.add_argument('--tol-coarse', type=float, default=None, help='Coarse tolerance eps_c')
    return parser


def _cli_settings(args: argparse.Namespace) -> Dict[str, object]:
    settings = {
        'function': args.function,
        'dimension': args.dim,
        'trials': args.trials,
        'seed': args.seed,
    }
    if args.command == 'approximate':
        settings.update(
            {
                'tolerances': args.tol,
                'tree': args.tree,
                'n_test': args.n_test,
                'absolute_error': args.absolute_error,
                'trial_workers': args.trial_workers,
                'learner.adaptive_pca': args.adaptive_pca,
                'learner.adaptive_basis': args.adaptive_basis,
                'learner.workers': args.workers,
            }
        )
    else:
        settings['tree_adaptation.coarse_tolerance'] = args.tol_coarse
    return settings


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point of the ttn-approximation command line.
    Returns 0 when every trial succeeded, 1 when some failed and 2 on configuration errors.
    """
    parser = build_parser()
    args, unknown = parser.parse_known_args(argv)

    # Configure logging
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    logger = logging.getLogger(__name__)

    cli_overrides = parse_unknown_args_to_dict(unknown)
    try:
        config = build_experiment_config(
            config_file_path=args.config_file_path,
            cli_settings=_cli_settings(args),
            cli_overrides=cli_overrides,
        )
    except ValueError as e:
        logger.error(f'Invalid configuration: {e}')
        return EXIT_CONFIG_ERROR

    if args.command == 'rank':
        try:
            report = run_rank_trials(config, args.alpha, args.tol_coarse)
        except ValueError as e:
            logger.error(f'Invalid rank request: {e}')
            return EXIT_CONFIG_ERROR
        print(rank_report_json(report))
        return EXIT_OK

    logger.info(
        f'Running {config.trials} trial(s) of {config.function} at tolerances '
        f'{config.tolerances} on {config.tree} trees'
    )
    report = run_trials(config, model_path=args.out)
    if args.report:
        write_reports(report, args.report)
    else:
        sys.stdout.write(report_csv(report))
    return EXIT_OK if report.all_succeeded else EXIT_TRIALS_FAILED


if __name__ == '__main__':
    sys.exit(main())

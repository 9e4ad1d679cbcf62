import argparse
import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import List, Optional

from result import is_err

from phasecode import __version__, logger
from phasecode.experiments import InitKind, Mode, load_config, run_experiment

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
MAX_LOG_BYTES = 1_000_000
DEFAULT_OUT = 'results.csv'

_handler: Optional[logging.Handler] = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pr', description='Sparse-graph-coded phase retrieval experiments')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='mode', required=True)
    for mode, description in ((Mode.DensityEvolution, 'density evolution trajectories'),
                              (Mode.Simulation, 'decode trials at one (K, M/K) point'),
                              (Mode.Sweep, 'decode trials over a (K, M/K) grid'),
                              (Mode.TwoLayer, 'compressive sensing + phase layer trials')):
        sub = subparsers.add_parser(mode.value, help=description)
        _add_run_flags(sub)
    return parser


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    # Flags default to None so that only the ones given override the config file
    parser.add_argument('--config', help='JSON file with the experiment configuration')
    parser.add_argument('--n', type=int, help='signal length')
    parser.add_argument('--k', type=int, nargs='+', help='sparsity (one value or a grid)')
    parser.add_argument('--mk', type=float, nargs='+', help='bins per ball M/K (one value or a grid)')
    parser.add_argument('--eps', type=float, nargs='+',
                        help='capacity gaps for density evolution; in twolayer one eps sets R/K = 1 + eps')
    parser.add_argument('--d', type=int, help='maximum left degree D')
    parser.add_argument('--p-star', type=float, dest='p_star', help='target error floor; picks D per design')
    parser.add_argument('--p0', type=float, help='initial uncolored probability for density evolution')
    parser.add_argument('--init', choices=[kind.value for kind in InitKind], help='initialization stage')
    parser.add_argument('--eps2', type=float, help='active sensing rows per ball')
    parser.add_argument('--delta', type=float, help='fraction of the support given to known-support initialization')
    parser.add_argument('--ratio', type=float, help='two-layer CS bins per ball R/K (overrides --eps)')
    parser.add_argument('--cs-degree', type=int, dest='cs_degree', help='two-layer CS left degree')
    parser.add_argument('--threshold', type=float, help='largest uncolored fraction that counts as success')
    parser.add_argument('--trials', type=int, help='trials per grid point')
    parser.add_argument('--seed', type=int, help='run seed (64-bit unsigned)')
    parser.add_argument('--jobs', type=int, help='worker processes; 0 uses every core')
    parser.add_argument('--out', help='output CSV path')
    parser.add_argument('--log-file', dest='log_file', help='also log to this rotating file')
    parser.add_argument('--verbose', action='store_true', help='log decoder details')


def configure_logging(log_file: Optional[str], verbose: bool) -> None:
    """Sends the package log to [log_file] (rotated at 1 MB) or to stderr. Calling it again replaces the handler."""
    global _handler
    if _handler is not None:
        logger.removeHandler(_handler)
        _handler.close()
    _handler = RotatingFileHandler(log_file, maxBytes=MAX_LOG_BYTES, backupCount=3) if log_file \
        else logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(_handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the `pr` command. Returns 2 when the configuration or the run is rejected."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_file, args.verbose)

    overrides = {key: value for key, value in vars(args).items()
                 if key not in ('config', 'log_file', 'verbose', 'mode', 'init')}
    overrides['mode'] = Mode.from_literal(args.mode)
    if args.init:
        overrides['init'] = InitKind.from_literal(args.init)

    cfg = load_config(args.config, overrides)
    if is_err(cfg):
        print(f'pr: {cfg.err_value}', file=sys.stderr)
        return 2
    cfg = cfg.ok_value
    if not cfg.out:
        cfg = cfg.with_overrides({'out': DEFAULT_OUT})

    logger.info(f'Running {cfg.mode.value} (config {cfg.config_hash})')
    outcome = run_experiment(cfg)
    if is_err(outcome):
        print(f'pr: {outcome.err_value}', file=sys.stderr)
        return 2
    print(outcome.ok_value)
    return 0


if __name__ == '__main__':
    sys.exit(main())

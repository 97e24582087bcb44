"""
L1 Dictionary Learning Toolkit - Command Line Interface
Runs the simulation commands and writes plot-ready CSV/JSON tables.

Usage:
    python main.py sharpness --seeds 20 --offsets 0.1 -0.2
    python main.py sample-size --K-list 12 16 20 --threads 4
    python main.py phase-diagram --K-list 10 --s-list 3 --tau 0.5
    python main.py timing
    python main.py counterexample --grid 360
    python main.py recover --signals data/signals.csv --tau 0.5
    python main.py test-dict --dictionary D.csv --signals Y.csv --rho 0.01
    python main.py theory --K-list 10 20

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import os
import sys
import argparse
import logging
from typing import Dict, List, Optional

from src.experiments import COMMANDS
from src.utils import load_config, setup_logging

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config', 'config.yaml')


def _tau(value: str) -> float:
    """Positive float or 'inf'."""
    tau = float(value)
    if not tau > 0:
        raise argparse.ArgumentTypeError(f"tau must be positive, got {value}")
    return tau


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=DEFAULT_CONFIG,
                        help='Path to configuration file (default: config/config.yaml)')
    common.add_argument('--seed', type=int, default=None, help='Master seed (default from config)')
    common.add_argument('--out', type=str, default=None,
                        help='Output path; the suffix is set from --format (default: results/<command>)')
    common.add_argument('--format', type=str, choices=['csv', 'json'], default=None, help='Output format')
    common.add_argument('--threads', type=int, default=None, help='Worker processes for trial fan-out')
    return common


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per experiment"""
    parser = argparse.ArgumentParser(
        description='L1 Dictionary Learning Toolkit - sharpness tests, DL-BCD recovery and simulations'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    common = _common_parser()

    p = subparsers.add_parser('sharpness', parents=[common],
                              help='Sharp-test verdicts across perturbation levels')
    p.add_argument('--K', type=int, default=None, help='Dimension')
    p.add_argument('--s', type=int, default=None, help='Sparsity of SG(s)')
    p.add_argument('--n', type=int, default=None, help='Number of signals')
    p.add_argument('--offsets', type=float, nargs='+', default=None,
                   help='mu = (1/sqrt(s)) ((K-s)/(K-1) + offset); negative offsets are sharp')
    p.add_argument('--rhos', type=float, nargs='+', default=None, help='Perturbation levels')
    p.add_argument('--threshold', type=float, default=None, help='Sharpness threshold T')
    p.add_argument('--snr', type=float, default=None, help='Signal-to-noise ratio (inf for noiseless)')
    p.add_argument('--seeds', type=int, default=None, help='Trials per grid point')

    p = subparsers.add_parser('sample-size', parents=[common],
                              help='Sharp fraction against n and the 50%% crossing')
    p.add_argument('--K-list', dest='K_list', type=int, nargs='+', default=None)
    p.add_argument('--n-list', dest='n_list', type=int, nargs='+', default=None)
    p.add_argument('--s', type=int, default=None)
    p.add_argument('--mu', type=float, default=None)
    p.add_argument('--rho', type=float, default=None)
    p.add_argument('--threshold', type=float, default=None)
    p.add_argument('--seeds', type=int, default=None)

    p = subparsers.add_parser('phase-diagram', parents=[common],
                              help='DL-BCD recovery rate over (K, s)')
    p.add_argument('--K-list', dest='K_list', type=int, nargs='+', default=None)
    p.add_argument('--s-list', dest='s_list', type=int, nargs='+', default=None,
                   help='Sparsity levels (default: s_min..K)')
    p.add_argument('--s-min', dest='s_min', type=int, default=None)
    p.add_argument('--samples-per-dim', dest='samples_per_dim', type=int, default=None, help='n = value * K')
    p.add_argument('--snr', type=float, default=None)
    p.add_argument('--tau', type=_tau, default=None, help="Truncation threshold ('inf' disables)")
    p.add_argument('--success-nmse', dest='success_nmse', type=float, default=None)
    p.add_argument('--max-sweeps', dest='max_sweeps', type=int, default=None)
    p.add_argument('--seeds', type=int, default=None)

    p = subparsers.add_parser('timing', parents=[common], help='Sharp-test wall-clock scaling')
    p.add_argument('--K-fixed', dest='K_fixed', type=int, default=None)
    p.add_argument('--n-list', dest='n_list', type=int, nargs='+', default=None)
    p.add_argument('--n-fixed', dest='n_fixed', type=int, default=None)
    p.add_argument('--K-list', dest='K_list', type=int, nargs='+', default=None)
    p.add_argument('--model', type=str, choices=['bg', 'sg', 'abs_sg', 'sl'], default=None)
    p.add_argument('--p', type=float, default=None, help='BG activation probability')
    p.add_argument('--s', type=int, default=None)
    p.add_argument('--mu', type=float, default=None)
    p.add_argument('--rho', type=float, default=None)
    p.add_argument('--repeats', type=int, default=None)

    p = subparsers.add_parser('counterexample', parents=[common],
                              help='Objective landscape of the 2-D counter-example')
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--grid', type=int, default=None, help='Angles per axis')
    p.add_argument('--rho', type=float, default=None)
    p.add_argument('--threshold', type=float, default=None)

    p = subparsers.add_parser('recover', parents=[common], help='Single DL-BCD run')
    p.add_argument('--signals', type=str, default=None,
                   help='Signal CSV (rows are signals) or signal-set prefix; generated when omitted')
    p.add_argument('--reference', type=str, default=None, help='Reference dictionary CSV for NMSE')
    p.add_argument('--K', type=int, default=None)
    p.add_argument('--s', type=int, default=None)
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--snr', type=float, default=None)
    p.add_argument('--mu', type=float, default=None,
                   help='Constant-collinearity reference (default: random Gaussian)')
    p.add_argument('--tau', type=_tau, default=None)
    p.add_argument('--init', type=str, choices=['random', 'signals'], default=None)
    p.add_argument('--max-sweeps', dest='max_sweeps', type=int, default=None)
    p.add_argument('--verbose', action='store_true', default=None, help='Record per-coordinate objectives')

    p = subparsers.add_parser('test-dict', parents=[common], help='Sharp test of a dictionary CSV')
    p.add_argument('--dictionary', type=str, required=True)
    p.add_argument('--signals', type=str, required=True)
    p.add_argument('--rho', type=float, default=None)
    p.add_argument('--threshold', type=float, default=None)

    p = subparsers.add_parser('theory', parents=[common],
                              help='Critical coherence curves and identifiability report')
    p.add_argument('--K-list', dest='K_list', type=int, nargs='+', default=None)
    p.add_argument('--model', type=str, choices=['sg', 'bg', 'abs_sg', 'sl'], default=None)
    p.add_argument('--K', type=int, default=None)
    p.add_argument('--s', type=int, default=None)
    p.add_argument('--p', type=float, default=None)
    p.add_argument('--mu', type=float, default=None)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI execution"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not os.path.exists(args.config):
        print(f"ERROR: Configuration file not found: {args.config}")
        return 2

    config = load_config(args.config)
    setup_logging(config)
    logger.info(f"Configuration loaded from: {args.config}")

    overrides: Dict = {k: v for k, v in vars(args).items() if k not in ('command', 'config')}
    try:
        return COMMANDS[args.command](config, overrides)
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return 1
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())

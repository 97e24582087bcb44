"""
Complete Simulation Run - End-to-End Automation
Runs: Theory Curves → Counter-example → Timing → Sharpness → Sample Size → Phase Diagram

Usage:
    python run_experiments.py
    python run_experiments.py --stages theory counterexample --threads 4
"""

import os
import sys
import time
import argparse
import logging
from typing import Dict, List

from src.experiments import COMMANDS
from src.utils import format_duration, get_timestamp, load_config, print_header, print_summary, save_metadata, setup_logging

logger = logging.getLogger(__name__)

STAGES = ['theory', 'counterexample', 'timing', 'sharpness', 'sample-size', 'phase-diagram']


def parse_arguments():
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(description='Run every simulation stage with configuration defaults')
    parser.add_argument('--config', type=str, default='config/config.yaml',
                        help='Path to configuration file (default: config/config.yaml)')
    parser.add_argument('--stages', type=str, nargs='+', choices=STAGES, default=STAGES,
                        help='Stages to run, in order (default: all)')
    parser.add_argument('--out-dir', type=str, default=None, help='Override output directory')
    parser.add_argument('--threads', type=int, default=None, help='Worker processes per stage')
    parser.add_argument('--seed', type=int, default=None, help='Master seed for every stage')
    parser.add_argument('--format', type=str, choices=['csv', 'json'], default=None)
    return parser.parse_args()


def run_stage(name: str, config: Dict, out_dir: str, args) -> Dict:
    """Run one stage and return its status record"""
    print_header(f"STAGE: {name.upper()}")
    overrides = {
        'out': os.path.join(out_dir, name.replace('-', '_')),
        'threads': args.threads,
        'seed': args.seed,
        'format': args.format,
    }
    start = get_timestamp()
    code = COMMANDS[name](config, overrides)
    if code == 0:
        logger.info(f"✓ {name} completed successfully")
    else:
        logger.error(f"✗ {name} failed with exit code {code}")
    return {'stage': name, 'exit_code': code, 'start_time': start, 'end_time': get_timestamp()}


def main() -> int:
    """Run the selected stages in order"""
    args = parse_arguments()
    config = load_config(args.config)
    setup_logging(config)

    out_dir = args.out_dir or (config.get('experiments', {}) or {}).get('out_dir', 'results')
    os.makedirs(out_dir, exist_ok=True)

    print_header("L1 Dictionary Learning - Full Simulation Run")
    started = time.perf_counter()
    records: List[Dict] = [run_stage(name, config, out_dir, args) for name in args.stages]
    elapsed = time.perf_counter() - started

    failed = [r['stage'] for r in records if r['exit_code'] != 0]
    save_metadata({
        'config_file': args.config,
        'stages': records,
        'status': 'failed' if failed else 'completed',
        'elapsed': format_duration(elapsed),
    }, os.path.join(out_dir, 'run_metadata.json'))

    print_summary({
        'Stages run': len(records),
        'Failed': ', '.join(failed) if failed else 'none',
        'Total time': format_duration(elapsed),
        'Output directory': out_dir,
    })
    return 1 if failed else 0


if __name__ == '__main__':
    sys.exit(main())

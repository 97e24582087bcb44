"""
Shared helpers for the command line and the experiment runners.

Covers logging setup, YAML config loading, JSON sidecars, bit-exact matrix CSVs
and the table writer used by every experiment command.
"""

import os
import csv
import json
import yaml
import logging
from pathlib import Path
from datetime import datetime
from typing import Dict, Any, List, Optional, Sequence

import numpy as np

# Matrices round-trip bit-exactly through 17 significant digits
MATRIX_FMT = '%.17g'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
RULE = '=' * 60


def setup_logging(config: Dict) -> None:
    """
    Configure the root logger from the ``logging`` section of a config.

    Recognised keys: ``level`` (name such as DEBUG or INFO, unknown names fall back
    to INFO), ``save_logs`` and ``log_file``.
    """
    section = config.get('logging', {}) or {}
    name = str(section.get('level', 'INFO')).upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        name, level = 'INFO', logging.INFO

    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if section.get('save_logs', False):
        handlers.append(logging.FileHandler(section.get('log_file', 'dictlearn.log'), mode='a'))

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    logging.getLogger(__name__).debug(f"Root logger set to {name}")


def load_config(config_path: str) -> Dict:
    """
    Read a YAML config.

    An unreadable or empty file yields ``{}``; callers then run on built-in defaults.
    """
    try:
        with open(config_path, 'r') as f:
            return yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        logging.getLogger(__name__).error(f"Cannot read config {config_path}: {e}")
        return {}


def _json_default(o):
    """JSON fallback for arrays, numpy scalars and paths."""
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def save_metadata(data: Dict, output_path: str) -> None:
    """Dump a dictionary as indented JSON, creating parent folders."""
    _ensure_parent(output_path)
    with open(output_path, 'w') as f:
        json.dump(data, f, indent=2, default=_json_default)
    logging.getLogger(__name__).info(f"Wrote {output_path}")


def load_metadata(metadata_path: str) -> Dict:
    with open(metadata_path, 'r') as f:
        return json.load(f)


def save_matrix_csv(matrix: np.ndarray, output_path: str) -> None:
    """Write a 2-D array as headerless CSV with 17 significant digits."""
    _ensure_parent(output_path)
    np.savetxt(output_path, np.atleast_2d(matrix), delimiter=',', fmt=MATRIX_FMT)


def load_matrix_csv(input_path: str) -> np.ndarray:
    """Read a headerless numeric CSV written by save_matrix_csv."""
    return np.atleast_2d(np.loadtxt(input_path, delimiter=',', dtype=float, ndmin=2))


def _format_cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return MATRIX_FMT % float(value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_table(
    columns: Sequence[str],
    rows: List[Sequence[Any]],
    output_path: str,
    fmt: str = 'csv',
    summary: Optional[Dict] = None
) -> str:
    """
    Write tabular experiment output

    Args:
        columns: Column names (written as the CSV header)
        rows: Row values in column order
        output_path: Destination file; the suffix is replaced to match fmt
        fmt: 'csv' or 'json'
        summary: Optional summary block (JSON output, or a .summary.json sidecar for CSV)

    Returns:
        Path of the written table
    """
    path = Path(output_path).with_suffix('.' + fmt)
    path.parent.mkdir(parents=True, exist_ok=True)

    if fmt == 'json':
        payload = {
            'columns': list(columns),
            'rows': [list(r) for r in rows],
            'summary': summary or {},
        }
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2, default=_json_default)
    else:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_cell(v) for v in row])
        if summary:
            save_metadata(summary, str(path.with_suffix('.summary.json')))

    logging.getLogger(__name__).info(f"Wrote {len(rows)} rows -> {path}")
    return str(path)


def format_duration(seconds: float) -> str:
    """Render elapsed seconds as ``12.3s``, ``4m 05s`` or ``1h 02m``."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(seconds), 60)
    if minutes < 60:
        return f"{minutes}m {secs:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes:02d}m"


def get_timestamp() -> str:
    """Local time as YYYY-MM-DD_HH-MM-SS, safe for file names."""
    return datetime.now().strftime("%Y-%m-%d_%H-%M-%S")


def print_header(title: str) -> None:
    print(f"\n{RULE}\n  {title}\n{RULE}\n")


def print_summary(stats: Dict, title: str = "RUN SUMMARY") -> None:
    """Print key/value statistics between two rules, keys left-aligned."""
    width = max((len(str(k)) for k in stats), default=0)
    lines = [f"  {str(k).ljust(width)} : {v}" for k, v in stats.items()]
    print("\n".join(["", RULE, f"  {title}", RULE, *lines, RULE, ""]))

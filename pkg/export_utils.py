# export_utils.py
"""
CSV/JSON writers for paths, covariance tables and verification reports.

Floats are written with 17 significant digits so every artifact re-parses to
the exact binary value.
"""

import csv
import io
import json
import logging
import math
import os
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from config import OUTPUT_CONFIG

logger = logging.getLogger(__name__)

PATH_HEADER_PREFIX = ("m", "t")
COVARIANCE_HEADER = ("t", "s", "row", "col", "value")
WEIGHT_HEADER = ("k", "row", "col", "value")
INCREMENT_HEADER = ("i", "k", "value")
BENCH_HEADER = ("n", "d", "naive_seconds", "fft_seconds", "speedup", "max_abs_difference")


def format_float(x: float) -> str:
    return format(float(x), OUTPUT_CONFIG['float_format'])


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def path_header(d: int) -> list:
    return [*PATH_HEADER_PREFIX, *[f"x_{k + 1}" for k in range(d)]]


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf/nan
        return value if math.isfinite(value) else None
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    return value


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    return buffer.getvalue()


def json_text(payload: Any) -> str:
    return json.dumps(to_jsonable(payload), indent=2, sort_keys=False) + "\n"


def write_text(path: Optional[str], text: str) -> None:
    """Write to `path`, or to stdout when path is None or '-'."""
    if path in (None, "-"):
        print(text, end="")
        return
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.debug(f"wrote {len(text)} bytes to {path}")


def write_csv(path: Optional[str], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    write_text(path, csv_text(header, rows))


def write_json(path: Optional[str], payload: Any) -> None:
    write_text(path, json_text(payload))

"""Deterministic report emission: indented ``key: value`` text or JSON."""

from __future__ import annotations

import json
import math

import numpy as np


def _scalar(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _plain(x):
    """Convert numpy containers and non-finite floats into JSON-safe values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in (x.tolist() if isinstance(x, np.ndarray) else x)]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else _scalar(x)
    return x


def format_text(report: dict, indent=0) -> str:
    lines = []
    pad = "  " * indent
    for key, value in report.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.append(format_text(value, indent + 1))
        elif isinstance(value, (list, tuple, np.ndarray)):
            items = value.tolist() if isinstance(value, np.ndarray) else value
            if items and isinstance(items[0], dict):
                lines.append(f"{pad}{key}:")
                for i, item in enumerate(items):
                    lines.append(f"{pad}  - {i}:")
                    lines.append(format_text(item, indent + 2))
            else:
                lines.append(f"{pad}{key}: {_list(items)}")
        else:
            lines.append(f"{pad}{key}: {_scalar(value)}")
    return "\n".join(line for line in lines if line)


def _list(items):
    return "[" + ", ".join(_list(i) if isinstance(i, (list, tuple)) else _scalar(i) for i in items) + "]"


def format_report(report: dict, as_json=False) -> str:
    if as_json:
        return json.dumps(_plain(report), indent=2) + "\n"
    return format_text(report) + "\n"

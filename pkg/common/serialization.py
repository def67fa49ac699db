"""
Serialization utilities for the JSON and CSV reports.

This module converts numpy arrays, dataclass-like report objects and
non-finite floats into JSON-compatible types, and writes reports so that
re-running a command produces byte-identical files.
"""

import json
import math
from pathlib import Path

import numpy as np

CSV_FLOAT_FORMAT = '%.17g'


def make_json_serializable(obj):
    """
    Convert numpy objects and report containers to JSON-compatible types.

    This function recursively processes nested structures (dicts, lists, tuples)
    and converts numpy objects to standard Python types. Objects exposing
    `to_dict()` are converted through it; NaN and infinities become None.

    Parameters:
    -----------
    obj : any
        Object to be serialized (can be nested dict/list structure)

    Returns:
    --------
    any
        JSON-serializable equivalent of the input object

    Examples:
    ---------
    >>> import numpy as np
    >>> make_json_serializable({'beta': np.array([0.6, 0.8]), 'k': np.int64(3)})
    {'beta': [0.6, 0.8], 'k': 3}
    """
    if hasattr(obj, 'to_dict'):
        return make_json_serializable(obj.to_dict())
    elif isinstance(obj, np.ndarray):
        return [make_json_serializable(item) for item in obj.tolist()]
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, dict):
        return {str(k): make_json_serializable(v) for k, v in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [make_json_serializable(item) for item in obj]
    else:
        return obj


def dumps_report(obj) -> str:
    # keys keep insertion order so estimators appear in table order;
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(make_json_serializable(obj), indent=2, allow_nan=False) + '\n'


def write_text(text: str, path=None, stream=None):
    """Write to `path` when given, otherwise to `stream`."""
    if path is None:
        stream.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')


def frame_to_csv(frame) -> str:
    return frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')

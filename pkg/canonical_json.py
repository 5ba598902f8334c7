"""
canonical_json.py

Canonical JSON shared by run records, metrics and config re-serialization:
sorted keys, compact separators, floats with 17 significant digits,
non-finite floats as the strings "inf", "-inf", "nan", newline-terminated.
The digest is the SHA-256 of the canonical bytes.
"""

import hashlib
import json
import math
import os
import tempfile

import numpy as np


def _render_float(x):
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    if text == "-0":
        text = "0"
    return text


def _render(value, out):
    if value is None:
        out.append("null")
    elif value is True or value is False or isinstance(value, np.bool_):
        out.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        out.append(_render_float(float(value)))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value, key=str)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _render(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _render(item, out)
        out.append("]")
    elif hasattr(value, "to_dict"):
        _render(value.to_dict(), out)
    else:
        raise TypeError(f"cannot serialize {type(value).__name__} canonically")


def dumps(value):
    out = []
    _render(value, out)
    return "".join(out) + "\n"


def canonical_bytes(value):
    return dumps(value).encode("utf-8")


def digest(value):
    return hashlib.sha256(canonical_bytes(value)).hexdigest()


def write_atomic(path, data):
    """Write bytes or text next to path and rename over it."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_canonical(path, value):
    write_atomic(path, canonical_bytes(value))

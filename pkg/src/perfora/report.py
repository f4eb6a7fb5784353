"""Deterministic JSON rendering: sorted keys, floats at 17 significant digits."""

from __future__ import annotations

import json
import math

import numpy as np


def _float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _render(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [_render(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(pad + s for s in items) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(obj, key=str)
        items = [json.dumps(str(k)) + ": " + _render(obj[k], indent, level + 1) for k in keys]
        return "{\n" + ",\n".join(pad + s for s in items) + "\n" + end + "}"
    if hasattr(obj, "to_dict"):
        return _render(obj.to_dict(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _render(obj, indent, 0) + "\n"


def loads(text: str):
    return json.loads(text)

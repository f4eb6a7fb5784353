import math

import numpy as np

from perfora.report import dumps, loads


def test_floats_round_trip_exactly():
    vals = [0.1, 1 / 3, 2 * math.pi ** 2, 1e-300, 123456789.0, -0.0, 5e-324]
    back = loads(dumps({"v": vals}))["v"]
    assert all(a == b for a, b in zip(vals, back))


def test_sorted_keys_and_numpy_scalars():
    text = dumps({"b": np.float64(0.5), "a": np.int64(3), "c": [True, None], "d": np.arange(2)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert loads(text) == {"a": 3, "b": 0.5, "c": [True, None], "d": [0, 1]}


def test_non_finite():
    d = loads(dumps({"x": math.inf, "y": -math.inf}))
    assert d["x"] == math.inf and d["y"] == -math.inf

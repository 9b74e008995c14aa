import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entirespace import _accel

from oracles import fnv1a64


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_fnv_paths_agree(data):
    ref = fnv1a64(data)
    assert _accel.fnv1a64_np(data) == ref
    assert _accel.fnv1a64(data) == ref


@pytest.mark.parametrize("seed", range(20))
def test_rank_sum_auc_paths_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 200))
    s = np.round(rng.normal(size=n), 1)  # ties on purpose
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    assert _accel.rank_sum_auc(s, y) == _accel.rank_sum_auc_np(s, y)


def test_rank_sum_auc_single_class_is_nan():
    assert np.isnan(_accel.rank_sum_auc(np.arange(3.0), np.ones(3, dtype=int)))
    assert np.isnan(_accel.rank_sum_auc_np(np.arange(3.0), np.ones(3, dtype=int)))


def test_scatter_add_paths_agree():
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 7, 100)
    rows = rng.normal(size=(100, 3, 2))
    a = _accel.scatter_add_rows(np.zeros((7, 3, 2)), idx, rows)
    b = _accel.scatter_add_rows_np(np.zeros((7, 6)), idx, rows.reshape(100, 6)).reshape(7, 3, 2)
    # same accumulation order (index order), so results are bitwise equal
    assert np.array_equal(a, b)


def test_average_ranks():
    assert _accel.average_ranks_np(np.array([3.0, 1.0, 3.0, 2.0])).tolist() == [3.5, 1.0, 3.5, 2.0]


_PROBE = """
import json, numpy as np
from entirespace import _accel
rng = np.random.default_rng(1)
s = np.round(rng.normal(size=50), 1); y = rng.integers(0, 2, 50)
out = np.zeros((4, 2)); _accel.scatter_add_rows(out, np.array([0, 3, 0]), np.ones((3, 2)))
print(json.dumps({"numba": _accel.HAVE_NUMBA, "fnv": _accel.fnv1a64(b"entirespace"),
                  "auc": _accel.rank_sum_auc(s, y), "scatter": out.tolist()}))
"""


def _probe(disable):
    env = dict(os.environ)
    env.pop("ENTIRESPACE_DISABLE_JIT", None)
    if disable:
        env["ENTIRESPACE_DISABLE_JIT"] = "1"
    res = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def test_disabled_jit_falls_back_with_identical_results():
    off = _probe(True)
    on = _probe(False)
    assert off["numba"] is False
    assert on["numba"] is True
    assert {k: v for k, v in off.items() if k != "numba"} == {k: v for k, v in on.items() if k != "numba"}
    assert off["fnv"] == fnv1a64(b"entirespace")

"""Hot loops with a numba path and a pure-numpy fallback.

Set ``ENTIRESPACE_DISABLE_JIT=1`` before import to force the numpy path.
Both paths must agree bit-for-bit; ``tests/test_accel.py`` checks that.
"""

import os

import numpy as np

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)

_DISABLED = os.environ.get("ENTIRESPACE_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("jit disabled by environment")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in a subprocess
    HAVE_NUMBA = False


# ---------------------------------------------------------------- numpy path


def fnv1a64_np(data):
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def scatter_add_rows_np(out, idx, rows):
    np.add.at(out, idx, rows)
    return out


def average_ranks_np(x):
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    # boundaries of tie runs
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    mean_rank = (starts + ends + 1) / 2.0
    run_len = ends - starts
    ranks[order] = np.repeat(mean_rank, run_len)
    return ranks


def rank_sum_auc_np(scores, labels):
    ranks = average_ranks_np(scores)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.nan
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _fnv1a64_nb(data):
        h = FNV_OFFSET
        for i in range(data.shape[0]):
            h ^= np.uint64(data[i])
            h *= FNV_PRIME
        return h

    @njit(cache=True)
    def _scatter_add_rows_nb(out, idx, rows):
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(rows.shape[1]):
                out[r, j] += rows[i, j]
        return out

    @njit(cache=True)
    def _rank_sum_auc_nb(scores, labels):
        n = scores.shape[0]
        order = np.argsort(scores, kind="mergesort")
        n_pos = 0
        for i in range(n):
            if labels[i] == 1:
                n_pos += 1
        n_neg = n - n_pos
        if n_pos == 0 or n_neg == 0:
            return np.nan
        pos_rank_sum = 0.0
        i = 0
        while i < n:
            j = i
            while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
                j += 1
            mean_rank = (i + j + 2) / 2.0
            for k in range(i, j + 1):
                if labels[order[k]] == 1:
                    pos_rank_sum += mean_rank
            i = j + 1
        return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------- dispatch


def fnv1a64(data: bytes) -> int:
    if HAVE_NUMBA:
        return int(_fnv1a64_nb(np.frombuffer(data, dtype=np.uint8)))
    return fnv1a64_np(data)


def scatter_add_rows(out, idx, rows):
    """out[idx[i]] += rows[i], accumulating repeated indices."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1)
    rows = np.ascontiguousarray(rows, dtype=np.float64).reshape(len(idx), -1)
    flat = out.reshape(out.shape[0], -1)
    if HAVE_NUMBA:
        _scatter_add_rows_nb(flat, idx, rows)
    else:
        scatter_add_rows_np(flat, idx, rows)
    return out


def rank_sum_auc(scores, labels) -> float:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if HAVE_NUMBA:
        return float(_rank_sum_auc_nb(scores, labels))
    return float(rank_sum_auc_np(scores, labels))

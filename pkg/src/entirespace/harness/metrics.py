"""Ranking metrics: AUC by rank sum, impression-weighted group AUC, request-level hit rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _accel
from ..errors import UndefinedMetricError


def auc(scores, labels):
    """P(random positive outranks random negative), ties counting one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"auc: scores {s.shape} and labels {y.shape} must be equal-length vectors")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("auc needs both a positive and a negative label")
    return float(_accel.rank_sum_auc(s, y.astype(np.uint8)))


@dataclass(frozen=True)
class GroupAUC:
    value: float
    group_count: int
    excluded_group_count: int


def gauc_report(scores, labels, groups):
    """Group AUC with the counts of eligible and single-class groups.

    ``groups`` is one hashable key per sample, e.g. ``(user_id, query_id)``
    tuples or an ``[n, k]`` integer array whose rows are keys.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    g = np.asarray(groups)
    if g.ndim == 1:
        g = g[:, None]
    if len(g) != len(s) or len(y) != len(s):
        raise ValueError("gauc: scores, labels and groups must have equal length")
    if not len(s):
        raise UndefinedMetricError("gauc of an empty input")
    _, inv = np.unique(g, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    bounds = np.flatnonzero(np.diff(inv[order])) + 1
    total, weight, used, excluded = 0.0, 0, 0, 0
    for idx in np.split(order, bounds):
        yy = y[idx]
        if yy.all() or not yy.any():
            excluded += 1
            continue
        total += len(idx) * _accel.rank_sum_auc(s[idx], yy.astype(np.uint8))
        weight += len(idx)
        used += 1
    if not used:
        raise UndefinedMetricError(f"gauc: all {excluded} groups are single-class")
    return GroupAUC(total / weight, used, excluded)


def gauc(scores, labels, groups):
    """Impression-weighted mean AUC over groups holding both labels."""
    return gauc_report(scores, labels, groups).value


def hitrate_at_k(rankings, positives, k=5):
    """Share of requests with a positive whose top ``k`` holds at least one positive.

    ``rankings`` is a list of ranked item lists; ``positives`` the matching
    list of positive-item collections. Requests without positives are skipped.
    """
    hits = eligible = 0
    for ranked, pos in zip(rankings, positives):
        pos = set(pos)
        if not pos:
            continue
        if len(set(ranked)) != len(ranked):
            raise ValueError("hitrate_at_k: ranking contains duplicates")
        eligible += 1
        hits += any(v in pos for v in ranked[:k])
    if not eligible:
        raise UndefinedMetricError("hitrate_at_k: no request has a positive")
    return hits / eligible


def rank_requests(request_ids, item_ids, scores, labels):
    """Group flat rows by request and rank items by descending score (item id breaks ties)."""
    rid = np.asarray(request_ids)
    order = np.lexsort((np.asarray(item_ids), -np.asarray(scores, dtype=np.float64), rid))
    rankings, positives = [], []
    bounds = np.flatnonzero(np.diff(rid[order])) + 1
    for idx in np.split(order, bounds) if len(order) else []:
        rankings.append(np.asarray(item_ids)[idx].tolist())
        positives.append([int(i) for i, lab in zip(np.asarray(item_ids)[idx], np.asarray(labels)[idx]) if lab])
    return rankings, positives

"""Turn non-search clicks into search-schema records with a synthetic query."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..synthlog import Domain, EventKind
from .records import ExposureFlag, ItemEntry, LabelSource, Origin, RequestRecord


def build_cooccurrence(log):
    """item_id -> [(query_id, clicks)], by descending count then ascending query id."""
    counts = defaultdict(Counter)
    for e in log.events:
        if e.kind == EventKind.CLICK and e.domain == Domain.SEARCH and e.query_id is not None:
            counts[e.item_id][e.query_id] += 1
    return {item: sorted(c.items(), key=lambda qc: (-qc[1], qc[0])) for item, c in sorted(counts.items())}


@dataclass
class SearchHistory:
    """Per-user search requests as ``(timestamp, request_id, query_id, clicked_items)``."""

    by_user: dict = field(default_factory=lambda: defaultdict(list))

    @classmethod
    def from_log(cls, log):
        reqs = {}
        for e in log.events:
            if e.domain != Domain.SEARCH or e.query_id is None:
                continue
            if e.kind == EventKind.EXPOSURE and e.request_id not in reqs:
                reqs[e.request_id] = (e.timestamp, e.request_id, e.query_id, set(), e.user_id)
            elif e.kind == EventKind.CLICK and e.request_id in reqs:
                reqs[e.request_id][3].add(e.item_id)
        hist = cls()
        for ts, rid, q, clicked, u in sorted(reqs.values(), key=lambda x: (x[0], x[1])):
            hist.by_user[u].append((ts, rid, q, frozenset(clicked)))
        return hist

    def before(self, user_id, t):
        return [h for h in self.by_user.get(user_id, ()) if h[0] < t]


def synthesize_query(user_id, item_id, user_search_history, cooc, world):
    """Query for a non-search click, with the tier that produced it.

    (i) the user's most recent earlier query whose clicks include the item;
    (ii) the item's most co-clicked search query;
    (iii) the query whose embedding is closest to the item title (cosine,
    exact scan, lowest id on ties).
    """
    for ts, rid, q, clicked in reversed(user_search_history):
        if item_id in clicked:
            return q, 1
    row = cooc.get(item_id)
    if row:
        return row[0][0], 2
    t = world.item_title[item_id]
    sims = (world.query_emb @ t) / (np.linalg.norm(world.query_emb, axis=1) * np.linalg.norm(t))
    return int(np.argmax(sims)), 3


@dataclass
class SearchifyDeps:
    world: object
    featurizer: object
    cooc: dict
    history: SearchHistory
    clicked_by_request: dict
    converted: set = field(default_factory=set)  # (request_id, item_id)
    counters: Counter = field(default_factory=Counter)


def searchify(click_event, same_request_exposures, world, k_neg, deps: SearchifyDeps, request_id):
    """One pseudo-search record: the clicked item plus its ``k_neg`` most similar unclicked co-exposures.

    Returns None (and bumps ``deps.counters["searchify_no_negatives"]``) when
    every co-exposed item was clicked.
    """
    v = click_event.item_id
    clicked = deps.clicked_by_request.get(click_event.request_id, {v})
    pool = [i for i in same_request_exposures if i not in clicked and i != v]
    if not pool:
        deps.counters["searchify_no_negatives"] += 1
        return None
    pool = np.array(sorted(pool), dtype=np.int64)
    title = world.item_title
    sims = (title[pool] @ title[v]) / (np.linalg.norm(title[pool], axis=1) * np.linalg.norm(title[v]))
    order = np.lexsort((pool, -sims))[:k_neg]
    negatives = pool[order].tolist()

    q, tier = synthesize_query(click_event.user_id, v, deps.history.before(click_event.user_id, click_event.timestamp),
                               deps.cooc, world)
    deps.counters[f"query_tier_{tier}"] += 1
    fz = deps.featurizer
    items = []
    for item, positive in [(v, True)] + [(n, False) for n in negatives]:
        hashes, dense = fz.item_features(item)
        items.append(ItemEntry(
            item, hashes, dense, ExposureFlag.EXPOSED,
            click_label=1 if positive else 0,
            conversion_label=int(positive and (click_event.request_id, item) in deps.converted),
            label_source=LabelSource.IN_DOMAIN if positive else LabelSource.SYNTHETIC_NEGATIVE,
            origin=Origin.SEARCHIFIED,
        ))
    return RequestRecord(
        request_id=request_id, domain_id=click_event.domain, user_id=click_event.user_id, query_id=q,
        timestamp=click_event.timestamp, user_feature_hashes=fz.user_hashes(click_event.user_id),
        query_feature_hashes=fz.query_hashes(q), context_features=fz.context(q), items=items, synthetic=True,
    )

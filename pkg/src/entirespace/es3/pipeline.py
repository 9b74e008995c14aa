"""Sample construction end to end: base records, expansion, attribution, searchification."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError
from ..synthlog import Domain, EventKind
from .attribution import (
    AttributionWindow,
    _UserIndex,
    attribute_labels,
    find_target,
    search_request_ids,
    split_events,
)
from .hashing import Featurizer
from .records import ExposureFlag, ItemEntry, LabelSource, RequestRecord
from .searchify import SearchHistory, SearchifyDeps, build_cooccurrence, searchify

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ES3Config:
    unexposed_expansion: bool = True
    attribution: bool = True
    searchification: bool = True
    unexposed_per_exposed: int = 2
    k_neg: int = 4
    max_lag: int = AttributionWindow.max_lag
    # clicks already attributed to a search record carry a search association
    searchify_attributed: bool = False
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown es3 key")
        cfg = cls(**d)
        if cfg.unexposed_per_exposed < 0:
            raise ConfigError("unexposed_per_exposed", "must be >= 0")
        if cfg.k_neg < 1:
            raise ConfigError("k_neg", "must be >= 1")
        if cfg.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        AttributionWindow(cfg.max_lag)
        return cfg


def _request_rng(seed, request_id):
    return np.random.default_rng([seed, 0xE3, request_id])


def sample_without_replacement(rng, n, k):
    """Distinct indices in ``[0, n)``, in draw order, by rejecting repeats.

    Draws uniform doubles in batches and maps each to ``floor(u * n)``; the
    picks equal those of a scalar ``rng.random()`` loop on the same stream.
    """
    k = min(k, n)
    picked, seen = [], set()
    while len(picked) < k:
        batch = np.floor(rng.random(max(2 * (k - len(picked)), 8)) * n).astype(np.int64)
        for i in batch.tolist():
            if i not in seen:
                seen.add(i)
                picked.append(i)
                if len(picked) == k:
                    break
    return picked


def expand_unexposed(record, candidates, k_unexp, rng_seed, featurizer=None, counters=None):
    """Append up to ``k_unexp`` uniformly drawn unexposed candidates (labels 0)."""
    exposed = {e.item_id for e in record.items}
    pool = [c for c in candidates if c not in exposed]
    out = record.copy()
    if not pool:
        if counters is not None:
            counters["expand_empty_pool"] += 1
        return out
    rng = _request_rng(rng_seed, record.request_id)
    for i in sample_without_replacement(rng, len(pool), k_unexp):
        item = pool[i]
        if featurizer is not None:
            hashes, dense = featurizer.item_features(item)
        else:
            hashes, dense = [], []
        out.items.append(ItemEntry(item, hashes, dense, ExposureFlag.UNEXPOSED))
    return out


def base_search_records(log, featurizer):
    """Exposed-only search records with in-domain click and conversion labels."""
    search_reqs = search_request_ids(log)
    heads, exposed = {}, defaultdict(list)
    clicks, convs = set(), set()
    for e in log.events:
        if e.request_id not in search_reqs:
            continue
        if e.kind == EventKind.EXPOSURE:
            heads.setdefault(e.request_id, e)
            exposed[e.request_id].append(e.item_id)
        elif e.domain == Domain.SEARCH:
            (clicks if e.kind == EventKind.CLICK else convs).add((e.request_id, e.item_id))
    records = []
    for rid, h in heads.items():
        items = []
        for v in exposed[rid]:
            hashes, dense = featurizer.item_features(v)
            c = int((rid, v) in clicks)
            items.append(ItemEntry(v, hashes, dense, ExposureFlag.EXPOSED, click_label=c,
                                   conversion_label=int(c and (rid, v) in convs),
                                   label_source=LabelSource.IN_DOMAIN))
        records.append(RequestRecord(rid, Domain.SEARCH, h.user_id, h.query_id, h.timestamp,
                                     featurizer.user_hashes(h.user_id), featurizer.query_hashes(h.query_id),
                                     featurizer.context(h.query_id), items))
    records.sort(key=lambda r: (r.timestamp, r.request_id))
    return records


@dataclass
class StageRow:
    stage: str
    requests: int
    samples: int
    click_positives: int
    conversion_positives: int

    def multipliers(self, base):
        def ratio(a, b):
            return a / b if b else float("nan")
        return {
            "requests": ratio(self.requests, base.requests),
            "samples": ratio(self.samples, base.samples),
            "click_positives": ratio(self.click_positives, base.click_positives),
        }


@dataclass
class DatasetStats:
    rows: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def add(self, stage, records):
        self.rows.append(count_stage(stage, records))

    def to_dict(self):
        base = self.rows[0]
        return {
            "stages": [dict(asdict(r), multipliers=r.multipliers(base)) for r in self.rows],
            "counters": dict(sorted(self.counters.items())),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self):
        base = self.rows[0]
        lines = [f"{'stage':<34}{'requests':>10}{'samples':>10}{'click pos':>11}"]
        for r in self.rows:
            m = r.multipliers(base)
            lines.append(f"{r.stage:<34}{m['requests']:>9.2f}x{m['samples']:>9.2f}x{m['click_positives']:>10.2f}x")
        return "\n".join(lines)


def count_stage(stage, records):
    return StageRow(
        stage,
        requests=len(records),
        samples=sum(len(r.items) for r in records),
        click_positives=sum(e.click_label for r in records for e in r.items),
        conversion_positives=sum(e.conversion_label for r in records for e in r.items),
    )


STAGES = ("baseline (search-exposed only)", "+ unexposed expansion",
          "+ hierarchical label attribution", "+ cross-domain searchification")


def _user_partitions(records, threads):
    parts = [[] for _ in range(threads)]
    for r in records:
        parts[r.user_id % threads].append(r)
    return parts


def _searchify_all(log, world, featurizer, records, config, counters):
    cooc = build_cooccurrence(log)
    history = SearchHistory.from_log(log)
    exposures, clicked, converted = defaultdict(list), defaultdict(set), set()
    for e in log.events:
        if e.kind == EventKind.EXPOSURE:
            exposures[e.request_id].append(e.item_id)
        elif e.kind == EventKind.CLICK:
            clicked[e.request_id].add(e.item_id)
        elif e.request_id in exposures:
            converted.add((e.request_id, e.item_id))
    search_reqs = search_request_ids(log)
    attributed = set()
    if not config.searchify_attributed:
        # clicks that found a search record during attribution
        in_clicks, cross_clicks, _ = split_events(log)
        index = _UserIndex(records)
        window = AttributionWindow(config.max_lag)
        for e in cross_clicks:
            if find_target(e, records, index, in_clicks, window) is not None:
                attributed.add(e.event_id)
    deps = SearchifyDeps(world, featurizer, cooc, history, clicked, converted, counters)
    next_id = max(log.candidate_lists, default=-1) + 1
    out = []
    for e in log.events:
        if e.kind != EventKind.CLICK or e.request_id in search_reqs:
            continue
        rid = next_id
        next_id += 1  # ids are reserved per click so they never depend on skips
        if e.event_id in attributed:
            counters["searchify_skipped_attributed"] += 1
            continue
        rec = searchify(e, exposures[e.request_id], world, config.k_neg, deps, rid)
        if rec is not None:
            out.append(rec)
    return out


def build_dataset(log, world, config=ES3Config()):
    """Run the enabled stages and return ``(records, DatasetStats)``.

    One stats row is emitted per stage even when a stage is disabled, so the
    report always has the same four rows.
    """
    counters = Counter()
    featurizer = Featurizer(world)
    records = base_search_records(log, featurizer)
    stats = DatasetStats()
    stats.add(STAGES[0], records)

    if config.unexposed_expansion:
        def expand(part):
            c = Counter()
            fz = Featurizer(world)
            res = [expand_unexposed(r, log.candidate_lists.get(r.request_id, []),
                                    config.unexposed_per_exposed * len(r.items), config.seed, fz, c)
                   for r in part]
            return res, c
        records = _run_partitioned(records, config.threads, expand, counters)
    stats.add(STAGES[1], records)

    if config.attribution:
        window = AttributionWindow(config.max_lag)

        def attribute(part):
            c = Counter()
            return attribute_labels(part, _PartitionLog(log, {r.user_id for r in part}), window, c), c
        records = _run_partitioned(records, config.threads, attribute, counters)
    stats.add(STAGES[2], records)

    if config.searchification:
        records = records + _searchify_all(log, world, featurizer, records, config, counters)
        records.sort(key=lambda r: (r.timestamp, r.request_id))
    stats.add(STAGES[3], records)
    stats.counters = dict(counters)
    if counters:
        logger.info("es3 counters: %s", dict(sorted(counters.items())))
    return records, stats


class _PartitionLog:
    """View of a log restricted to some users (attribution never crosses users)."""

    def __init__(self, log, users):
        self.events = [e for e in log.events if e.user_id in users]
        self.candidate_lists = log.candidate_lists


def _run_partitioned(records, threads, fn, counters):
    parts = _user_partitions(records, threads)
    if threads == 1:
        results = [fn(parts[0])]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(fn, parts))
    merged = []
    for recs, c in results:
        merged.extend(recs)
        counters.update(c)
    merged.sort(key=lambda r: (r.timestamp, r.request_id))
    return merged

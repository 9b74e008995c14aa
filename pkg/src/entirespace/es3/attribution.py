"""Hierarchical attribution of cross-domain clicks and conversions onto search records.

Eligible targets for an event ``(user, item, t)`` are entries for ``item`` in
the user's genuine search records with ``t - max_lag <= timestamp <= t``.
Candidates are grouped into priority tiers:

* click:      exposed  >  unexposed
* conversion: exposed with an in-domain click  >  exposed without one  >  unexposed

The first non-empty tier wins and, inside it, the most recent record
(highest ``(timestamp, request_id)``). Tiers are judged on in-domain state
taken from the log, never on labels written by earlier attributions, so the
result does not depend on event order and a second pass changes nothing.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

from ..synthlog import Domain, EventKind
from .records import ExposureFlag, LabelSource

TICKS_PER_DAY = 1440


@dataclass(frozen=True)
class AttributionWindow:
    max_lag: int = 7 * TICKS_PER_DAY
    tie_rule: str = "most_recent_eligible_request"

    def __post_init__(self):
        if self.max_lag <= 0:
            raise ValueError("max_lag must be > 0")


def search_request_ids(log):
    """Requests whose exposures happened in the search domain."""
    return {e.request_id for e in log.events if e.kind == EventKind.EXPOSURE and e.domain == Domain.SEARCH}


def split_events(log):
    """Return ``(in_domain_clicks, cross_clicks, cross_conversions)``.

    In-domain clicks are ``(request_id, item_id)`` pairs of search clicks on
    search requests; every other click or conversion is cross-domain.
    """
    search_reqs = search_request_ids(log)
    in_clicks = set()
    cross_clicks, cross_convs = [], []
    for e in log.events:
        in_domain = e.domain == Domain.SEARCH and e.request_id in search_reqs
        if e.kind == EventKind.CLICK:
            if in_domain:
                in_clicks.add((e.request_id, e.item_id))
            else:
                cross_clicks.append(e)
        elif e.kind == EventKind.CONVERSION and not in_domain:
            cross_convs.append(e)
    return in_clicks, cross_clicks, cross_convs


class _UserIndex:
    def __init__(self, records):
        self.by_user = defaultdict(list)
        for ri, r in enumerate(records):
            if r.synthetic or r.domain_id != Domain.SEARCH:
                continue
            pos = {e.item_id: k for k, e in enumerate(r.items)}
            self.by_user[r.user_id].append((r.timestamp, r.request_id, ri, pos))
        for lst in self.by_user.values():
            lst.sort(key=lambda x: (x[0], x[1]))


def _tier(event_kind, entry, request_id, item_id, in_clicks):
    exposed = entry.exposure_flag == ExposureFlag.EXPOSED
    if event_kind == EventKind.CLICK:
        return 0 if exposed else 1
    if exposed:
        return 0 if (request_id, item_id) in in_clicks else 1
    return 2


def find_target(event, records, index, in_clicks, window):
    """(record index, entry index) the event attributes to, or None."""
    lo = event.timestamp - window.max_lag
    best = None
    for ts, rid, ri, pos in index.by_user.get(event.user_id, ()):
        if ts > event.timestamp:
            break
        if ts < lo:
            continue
        k = pos.get(event.item_id)
        if k is None:
            continue
        tier = _tier(event.kind, records[ri].items[k], rid, event.item_id, in_clicks)
        # lists are ascending in (ts, rid), so later hits in a tier are more recent
        if best is None or tier <= best[0]:
            best = (tier, ri, k)
    return None if best is None else (best[1], best[2])


def attribute_labels(records, log, window=AttributionWindow(), counters=None):
    """Return new records with cross-domain feedback attributed; inputs are untouched."""
    counters = counters if counters is not None else Counter()
    out = [r.copy() for r in records]
    index = _UserIndex(out)
    in_clicks, cross_clicks, cross_convs = split_events(log)
    for e in cross_clicks + cross_convs:
        kind = "click" if e.kind == EventKind.CLICK else "conversion"
        if e.user_id not in index.by_user:
            counters["unknown_user"] += 1
            continue
        hit = find_target(e, out, index, in_clicks, window)
        if hit is None:
            counters[f"unattributed_{kind}"] += 1
            continue
        entry = out[hit[0]].items[hit[1]]
        flipped = entry.click_label == 0 or (kind == "conversion" and entry.conversion_label == 0)
        entry.click_label = 1
        if kind == "conversion":
            entry.conversion_label = 1
        if flipped:
            entry.label_source = LabelSource.CROSS_DOMAIN_ATTRIBUTED
        counters[f"attributed_{kind}"] += 1
    return out

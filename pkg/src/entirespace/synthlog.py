"""Synthetic multi-domain e-commerce world and behavior-log simulator.

The world has a known click model, so exposure and selection effects in the
logs can be measured against ground truth:

* search relevance  ``sigmoid(A * <user, item> + B * cos(query, title) + C0)``
* other domains     ``sigmoid(A * <user, item> + offset_d + price_bias_d * cheapness)``
* click             ``Bernoulli(p * 1 / log2(position + 2))``

Non-search domains reward cheap items (``cheapness`` is +1 for the lowest
price bucket, -1 for the highest) while search does not. That term is
feedback that only holds in its own domain.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

# Click-model constants.
A_AFFINITY = 3.0
B_QUERY = 3.0
C0 = -3.5

LOG_SCHEMA_VERSION = 1


class Domain(enum.IntEnum):
    SEARCH = 0
    RECOMMENDATION = 1
    DETAIL_PAGE = 2

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, s):
        return cls[s.upper()]


N_DOMAINS = len(Domain)


class EventKind(enum.IntEnum):
    EXPOSURE = 0
    CLICK = 1
    CONVERSION = 2

    @property
    def label(self):
        return self.name.lower()


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 100
    n_items: int = 300
    n_queries: int = 60
    n_categories: int = 12
    d_lat: int = 8
    d_emb: int = 16
    n_user_attrs: int = 3
    attr_cardinality: int = 8
    n_price_buckets: int = 5
    item_spread: float = 0.3
    user_spread: float = 0.2       # latent noise around the user's attribute profile
    query_spread: float = 0.4

    def validate(self):
        for f in ("n_users", "n_items", "n_queries", "n_categories", "n_user_attrs",
                  "attr_cardinality", "n_price_buckets"):
            if getattr(self, f) < 1:
                raise ConfigError(f, "must be >= 1")
        for f in ("d_lat", "d_emb"):
            if getattr(self, f) < 2:
                raise ConfigError(f, "must be >= 2")


@dataclass
class World:
    """Entities with dense integer ids; every vector has unit norm."""

    config: WorldConfig
    seed: int
    user_attrs: np.ndarray      # [U, n_user_attrs] int
    user_latent: np.ndarray     # [U, d_lat]
    item_category: np.ndarray   # [I] int
    item_price: np.ndarray      # [I] int
    item_latent: np.ndarray     # [I, d_lat]
    item_title: np.ndarray      # [I, d_emb]
    query_category: np.ndarray  # [Q] int
    query_emb: np.ndarray       # [Q, d_emb]

    @property
    def n_users(self):
        return len(self.user_latent)

    @property
    def n_items(self):
        return len(self.item_latent)

    @property
    def n_queries(self):
        return len(self.query_emb)

    def to_ndjson(self) -> str:
        lines = [json.dumps({"type": "world", "schema_version": LOG_SCHEMA_VERSION,
                             "seed": self.seed, "config": asdict(self.config)}, sort_keys=True)]
        for u in range(self.n_users):
            lines.append(json.dumps({"type": "user", "id": u, "attrs": self.user_attrs[u].tolist(),
                                     "latent": self.user_latent[u].tolist()}))
        for i in range(self.n_items):
            lines.append(json.dumps({"type": "item", "id": i, "category": int(self.item_category[i]),
                                     "price_bucket": int(self.item_price[i]),
                                     "latent": self.item_latent[i].tolist(),
                                     "title_emb": self.item_title[i].tolist()}))
        for q in range(self.n_queries):
            lines.append(json.dumps({"type": "query", "id": q, "category": int(self.query_category[q]),
                                     "emb": self.query_emb[q].tolist()}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ndjson(cls, text: str) -> "World":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = rows[0]
        if head.get("type") != "world" or head.get("schema_version") != LOG_SCHEMA_VERSION:
            raise ValueError("not a world file of a supported schema version")
        users = [r for r in rows if r["type"] == "user"]
        items = [r for r in rows if r["type"] == "item"]
        queries = [r for r in rows if r["type"] == "query"]
        return cls(
            config=WorldConfig(**head["config"]),
            seed=head["seed"],
            user_attrs=np.array([r["attrs"] for r in users], dtype=np.int64),
            user_latent=np.array([r["latent"] for r in users]),
            item_category=np.array([r["category"] for r in items], dtype=np.int64),
            item_price=np.array([r["price_bucket"] for r in items], dtype=np.int64),
            item_latent=np.array([r["latent"] for r in items]),
            item_title=np.array([r["title_emb"] for r in items]),
            query_category=np.array([r["category"] for r in queries], dtype=np.int64),
            query_emb=np.array([r["emb"] for r in queries]),
        )


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_world(config: WorldConfig, seed: int) -> World:
    config.validate()
    rng = np.random.default_rng([seed, 0x57])
    k = config.n_categories
    cat_lat = _unit(rng.normal(size=(k, config.d_lat)))
    cat_emb = _unit(rng.normal(size=(k, config.d_emb)))

    item_cat = rng.integers(0, k, size=config.n_items)
    item_latent = _unit(cat_lat[item_cat] + config.item_spread * rng.normal(size=(config.n_items, config.d_lat)))
    item_title = _unit(cat_emb[item_cat] + config.item_spread * rng.normal(size=(config.n_items, config.d_emb)))
    item_price = rng.integers(0, config.n_price_buckets, size=config.n_items)

    # observable attributes carry part of each user's taste, the rest is idiosyncratic
    user_attrs = rng.integers(0, config.attr_cardinality, size=(config.n_users, config.n_user_attrs))
    attr_lat = _unit(rng.normal(size=(config.n_user_attrs, config.attr_cardinality, config.d_lat)))
    profile = attr_lat[np.arange(config.n_user_attrs), user_attrs].sum(axis=1)
    user_latent = _unit(_unit(profile) + config.user_spread * rng.normal(size=(config.n_users, config.d_lat)))

    # every category gets a query before the rest are drawn at random
    q_cat = np.concatenate([rng.permutation(k), rng.integers(0, k, size=max(config.n_queries - k, 0))])
    q_cat = q_cat[: config.n_queries]
    query_emb = _unit(cat_emb[q_cat] + config.query_spread * rng.normal(size=(config.n_queries, config.d_emb)))

    return World(config, int(seed), user_attrs, user_latent, item_cat, item_price,
                 item_latent, item_title, q_cat.astype(np.int64), query_emb)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def ground_truth_relevance(world: World, user_id, query_id, item_id):
    """Search click probability at the top position, ``p(y=1 | u, v, q)``.

    ``query_id=None`` drops the query-match term. Accepts an array of item ids.
    """
    if not 0 <= int(user_id) < world.n_users:
        raise LookupError(f"unknown user_id {user_id}")
    items = np.asarray(item_id)
    if np.any(items < 0) or np.any(items >= world.n_items):
        raise LookupError(f"unknown item_id {item_id}")
    logit = A_AFFINITY * (world.item_latent[items] @ world.user_latent[int(user_id)]) + C0
    if query_id is not None:
        if not 0 <= int(query_id) < world.n_queries:
            raise LookupError(f"unknown query_id {query_id}")
        logit = logit + B_QUERY * (world.item_title[items] @ world.query_emb[int(query_id)])
    out = _sigmoid(logit)
    return float(out) if out.ndim == 0 else out


def cheapness(world: World, items):
    nb = world.config.n_price_buckets
    if nb == 1:
        return np.zeros(len(items))
    return 1.0 - 2.0 * world.item_price[items] / (nb - 1)


def domain_user_latent(world: World, sim: "SimConfig", seed: int):
    """Per-domain user interest ``[N_DOMAINS, U, d_lat]``: search keeps the world's latent,
    the other domains drift from it by ``domain_interest_shift``."""
    out = np.repeat(world.user_latent[None], N_DOMAINS, axis=0)
    if sim.domain_interest_shift > 0:
        rng = np.random.default_rng([seed, 0x1D])
        noise = rng.normal(size=(N_DOMAINS - 1,) + world.user_latent.shape)
        out[1:] = _unit(world.user_latent[None] + sim.domain_interest_shift * noise)
    return out


def domain_click_prob(world: World, sim: "SimConfig", domain: Domain, user_id, query_id, items,
                      user_latent=None, with_price=True):
    """Top-position click probability in ``domain``. ``user_latent`` overrides the user's interest vector."""
    items = np.asarray(items)
    if domain == Domain.SEARCH:
        return ground_truth_relevance(world, user_id, query_id, items)
    d = int(domain)
    lat = world.user_latent[user_id] if user_latent is None else user_latent
    logit = A_AFFINITY * (world.item_latent[items] @ lat) + sim.domain_offset[d]
    if with_price:
        logit = logit + sim.domain_price_bias[d] * cheapness(world, items)
    return _sigmoid(logit)


@dataclass(frozen=True)
class SimConfig:
    requests: tuple = (1500, 1500, 900)  # per domain, in Domain order
    candidate_size: int = 30
    k_exp: int = 6
    exposure_noise: float = 0.1
    tick_gap: int = 10
    conv_rate: float = 0.25
    cross_domain_prob: float = 0.3
    lag_min: int = 1
    lag_max: int = 400
    revisit_prob: float = 0.5
    history_window: int = 3
    query_temperature: float = 3.0
    domain_offset: tuple = (0.0, -1.0, -0.5)
    domain_price_bias: tuple = (0.0, 8.0, 6.0)
    position_discount: bool = True
    relevance_override: float | None = None
    ranker_sees_price: bool = False  # does the exposure ranker know the per-domain price bias
    domain_interest_shift: float = 1.5  # drift of non-search user interest from the search one

    def validate(self):
        if len(self.requests) != N_DOMAINS or any(r < 0 for r in self.requests):
            raise ConfigError("requests", f"need {N_DOMAINS} non-negative counts")
        if self.candidate_size < 1:
            raise ConfigError("candidate_size", "must be >= 1")
        if not 1 <= self.k_exp < self.candidate_size:
            raise ConfigError("k_exp", f"must satisfy 1 <= k_exp < candidate_size ({self.candidate_size})")
        if not 0 <= self.conv_rate <= 1:
            raise ConfigError("conv_rate", "must be a probability")
        if not 0 <= self.cross_domain_prob <= 1:
            raise ConfigError("cross_domain_prob", "must be a probability")
        if not 0 <= self.lag_min <= self.lag_max:
            raise ConfigError("lag_min", "need 0 <= lag_min <= lag_max")
        if self.domain_interest_shift < 0:
            raise ConfigError("domain_interest_shift", "must be >= 0")
        if self.tick_gap < 1:
            raise ConfigError("tick_gap", "must be >= 1")
        if self.relevance_override is not None and not 0 <= self.relevance_override <= 1:
            raise ConfigError("relevance_override", "must be a probability")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown sim key")
        d = dict(d)
        for k in ("requests", "domain_offset", "domain_price_bias"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, slots=True)
class BehaviorEvent:
    event_id: int
    timestamp: int
    domain: Domain
    request_id: int
    user_id: int
    query_id: int | None
    item_id: int
    kind: EventKind

    def to_json(self):
        return json.dumps({
            "event_id": self.event_id, "timestamp": self.timestamp, "domain": self.domain.label,
            "request_id": self.request_id, "user_id": self.user_id, "query_id": self.query_id,
            "item_id": self.item_id, "kind": self.kind.label,
        })

    @classmethod
    def from_json(cls, row):
        return cls(row["event_id"], row["timestamp"], Domain.parse(row["domain"]), row["request_id"],
                   row["user_id"], row["query_id"], row["item_id"], EventKind[row["kind"].upper()])


@dataclass
class EventLog:
    events: list = field(default_factory=list)
    candidate_lists: dict = field(default_factory=dict)

    def events_ndjson(self) -> str:
        head = json.dumps({"type": "eventlog", "schema_version": LOG_SCHEMA_VERSION, "n_events": len(self.events)})
        return "\n".join([head] + [e.to_json() for e in self.events]) + "\n"

    def candidates_ndjson(self) -> str:
        lines = [json.dumps({"request_id": r, "candidates": list(map(int, c))})
                 for r, c in sorted(self.candidate_lists.items())]
        return "\n".join(lines) + ("\n" if lines else "")

    def save(self, events_path, candidates_path):
        Path(events_path).write_text(self.events_ndjson())
        Path(candidates_path).write_text(self.candidates_ndjson())

    @classmethod
    def load(cls, events_path, candidates_path) -> "EventLog":
        lines = Path(events_path).read_text().splitlines()
        head = json.loads(lines[0])
        if head.get("type") != "eventlog" or head.get("schema_version") != LOG_SCHEMA_VERSION:
            raise ValueError(f"{events_path}: unsupported event log")
        events = [BehaviorEvent.from_json(json.loads(x)) for x in lines[1:] if x.strip()]
        cands = {}
        for line in Path(candidates_path).read_text().splitlines():
            if line.strip():
                row = json.loads(line)
                cands[row["request_id"]] = row["candidates"]
        return cls(events, cands)


def position_discount(pos):
    return 1.0 / np.log2(np.asarray(pos, dtype=np.float64) + 2.0)


def _request_rng(seed, request_id):
    # counter-style substream per request, independent of simulation order
    return np.random.default_rng([seed, 0x5EED, request_id])


def _category_latent(world):
    # mean item latent per category, used only to steer query choice
    k = world.config.n_categories
    out = np.zeros((k, world.item_latent.shape[1]))
    np.add.at(out, world.item_category, world.item_latent)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)


def _top_k(scores, k, exclude=()):
    scores = np.array(scores, dtype=np.float64)
    if len(exclude):
        scores[np.asarray(list(exclude), dtype=np.int64)] = -np.inf
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k]


def _non_search_candidates(world, sim, dom, user, rng, history, anchor):
    """Recommendation / detail-page retrieval with re-engagement of searched items."""
    c = sim.candidate_size
    chosen = []
    seen = np.unique(np.concatenate(history)) if history else np.empty(0, dtype=np.int64)
    n_revisit = min(int(round(sim.revisit_prob * c)), len(seen))
    if n_revisit:
        chosen = sorted(rng.choice(seen, n_revisit, replace=False).tolist())
    if dom == Domain.DETAIL_PAGE:
        if anchor is None:
            anchor = int(rng.integers(world.n_items))
        scores = world.item_title @ world.item_title[anchor]
        exclude = set(chosen) | {anchor}
    else:
        scores = world.item_latent @ world.user_latent[user]
        exclude = set(chosen)
    # retrieval over a random half of the corpus keeps lists varied
    pool_mask = rng.random(world.n_items) < 0.5
    scores = np.where(pool_mask, scores, -np.inf)
    fill = [int(i) for i in _top_k(scores, c - len(chosen), exclude) if np.isfinite(scores[i])]
    return np.array(chosen + fill, dtype=np.int64)


def simulate(world: World, sim: SimConfig, seed: int) -> EventLog:
    """Closed-loop exposure simulation across all domains.

    Search requests draw a query, retrieve the top ``candidate_size`` items
    by title/query cosine and expose the ``k_exp`` best by noisy relevance.
    Recommendation and detail-page requests re-surface items from the
    user's recent search candidates with probability ``revisit_prob`` per
    slot. Conversions follow clicks with ``conv_rate``; with
    ``cross_domain_prob`` they land in another domain after a lag, under the
    originating request id.
    """
    sim.validate()
    sched = np.random.default_rng([seed, 0x5C])
    domains = np.concatenate([np.full(n, d) for d, n in enumerate(sim.requests)]).astype(np.int64)
    domains = domains[sched.permutation(len(domains))]
    users = sched.integers(0, world.n_users, size=len(domains))

    cat_aff = world.user_latent @ _category_latent(world).T
    dom_lat = domain_user_latent(world, sim, seed)
    search_hist = {}
    last_click = {}
    cand_lists = {}
    raw = []

    for r, (d, u) in enumerate(zip(domains, users)):
        dom = Domain(int(d))
        u = int(u)
        rng = _request_rng(seed, r)
        tick = r * sim.tick_gap
        query = None
        if dom == Domain.SEARCH:
            logits = sim.query_temperature * cat_aff[u, world.query_category]
            p = np.exp(logits - logits.max())
            query = int(rng.choice(world.n_queries, p=p / p.sum()))
            cands = _top_k(world.item_title @ world.query_emb[query], sim.candidate_size)
        else:
            cands = _non_search_candidates(world, sim, dom, u, rng, search_hist.get(u, []), last_click.get(u))
        cand_lists[r] = cands.tolist()

        probs = domain_click_prob(world, sim, dom, u, query, cands, dom_lat[int(dom), u])
        rank_score = probs if sim.ranker_sees_price or dom == Domain.SEARCH else \
            domain_click_prob(world, sim, dom, u, query, cands, dom_lat[int(dom), u], with_price=False)
        noisy = rank_score + sim.exposure_noise * rng.normal(size=len(cands))
        top = np.argsort(-noisy, kind="stable")[: sim.k_exp]
        exposed = cands[top]
        p_click = probs[top] if sim.relevance_override is None else np.full(len(top), sim.relevance_override)
        if sim.position_discount:
            p_click = p_click * position_discount(np.arange(len(top)))
        clicked = rng.random(len(top)) < p_click
        converts = rng.random(len(top)) < sim.conv_rate
        cross = rng.random(len(top)) < sim.cross_domain_prob
        other = rng.integers(0, N_DOMAINS - 1, size=len(top))
        lags = rng.integers(sim.lag_min, sim.lag_max + 1, size=len(top))

        seq = 0
        for v in exposed:
            raw.append((tick, r, seq, dom, query, u, int(v), EventKind.EXPOSURE))
            seq += 1
        for j, v in enumerate(exposed):
            if not clicked[j]:
                continue
            raw.append((tick, r, seq, dom, query, u, int(v), EventKind.CLICK))
            seq += 1
            last_click[u] = int(v)
            if converts[j]:
                if cross[j]:
                    o = int(other[j])
                    cd = Domain(o + (o >= int(dom)))
                    raw.append((tick + int(lags[j]), r, seq, cd, query, u, int(v), EventKind.CONVERSION))
                else:
                    raw.append((tick, r, seq, dom, query, u, int(v), EventKind.CONVERSION))
                seq += 1
        if dom == Domain.SEARCH:
            hist = search_hist.setdefault(u, [])
            hist.append(cands)
            del hist[: -sim.history_window]

    raw.sort(key=lambda x: (x[0], x[1], x[2]))
    events = []
    for eid, (tick, r, _, dom, query, u, v, kind) in enumerate(raw):
        # the query travels only on search-domain events of search requests
        q = query if dom == Domain.SEARCH else None
        events.append(BehaviorEvent(eid, tick, dom, r, u, q, v, kind))
    return EventLog(events, cand_lists)


def check_log_invariants(log: EventLog):
    """Scan for ordering violations; returns a list of messages (empty when clean)."""
    problems = []
    exposed = set()
    clicked_ui = set()
    last_ts = {}
    prev_t = -1
    for e in log.events:
        if e.timestamp < prev_t:
            problems.append(f"event {e.event_id}: log not time-ordered")
        prev_t = e.timestamp
        if e.timestamp < last_ts.get(e.request_id, -1):
            problems.append(f"event {e.event_id}: timestamp decreases within request {e.request_id}")
        last_ts[e.request_id] = e.timestamp
        if e.kind == EventKind.EXPOSURE:
            exposed.add((e.request_id, e.item_id))
            if e.item_id not in log.candidate_lists.get(e.request_id, ()):
                problems.append(f"event {e.event_id}: exposed item missing from candidate list")
        elif e.kind == EventKind.CLICK:
            if (e.request_id, e.item_id) not in exposed:
                problems.append(f"event {e.event_id}: click without prior exposure")
            clicked_ui.add((e.user_id, e.item_id))
        elif (e.user_id, e.item_id) not in clicked_ui:
            problems.append(f"event {e.event_id}: conversion without prior click")
        if e.domain != Domain.SEARCH and e.query_id is not None:
            problems.append(f"event {e.event_id}: query_id on a non-search event")
    for r, c in log.candidate_lists.items():
        if len(set(c)) != len(c):
            problems.append(f"request {r}: duplicate candidates")
    return problems

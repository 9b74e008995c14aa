"""The synthetic benchmark: one simulated log, two training sets, one held-out search test set.

Requests are split by time. Training sets are built from the earlier part of
the log: ``search_only`` keeps exposed search samples, ``es3`` runs every
sample-construction stage. The test set holds the later search requests, by
default only their exposed slots, each labeled by a seeded Bernoulli draw from
the simulator's true search click probability.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError
from ..es3 import ES3Config, build_dataset
from ..es3.hashing import Featurizer
from ..es3.records import ExposureFlag, ItemEntry, LabelSource, RequestRecord
from ..synthlog import Domain, EventKind, EventLog, SimConfig, WorldConfig, generate_world, ground_truth_relevance, simulate


@dataclass(frozen=True)
class BenchmarkConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    es3: ES3Config = field(default_factory=ES3Config)
    test_fraction: float = 0.3
    test_exposed_only: bool = True  # score only the exposed slots of held-out requests

    def validate(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction", "must lie in (0, 1)")
        self.world.validate()
        self.sim.validate()
        return self

    def to_dict(self):
        return {"world": asdict(self.world), "sim": asdict(self.sim), "es3": asdict(self.es3),
                "test_fraction": self.test_fraction, "test_exposed_only": self.test_exposed_only}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown benchmark key")
        return cls(
            world=_strict(WorldConfig, d.get("world", {}), "world"),
            sim=SimConfig.from_dict(d.get("sim", {})),
            es3=ES3Config.from_dict(d.get("es3", {})),
            test_fraction=d.get("test_fraction", cls.test_fraction),
            test_exposed_only=d.get("test_exposed_only", cls.test_exposed_only),
        ).validate()


def _strict(cls, d, section):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    return cls(**d)


@dataclass
class Benchmark:
    world: object
    train_log: EventLog
    search_only: list
    es3: list
    test: list
    stats: object

    def dataset(self, name):
        if name == "search_only":
            return self.search_only
        if name == "es3":
            return self.es3
        raise ConfigError("dataset", f"unknown dataset variant {name!r}")


def split_log(log, cut_request):
    """Events and candidate lists of requests with id below ``cut_request``."""
    return EventLog([e for e in log.events if e.request_id < cut_request],
                    {r: c for r, c in log.candidate_lists.items() if r < cut_request})


def oracle_test_records(log, world, from_request, seed, exposed_only=False):
    """Search requests at or after ``from_request``, every candidate labeled by the true click probability."""
    fz = Featurizer(world)
    heads, exposed = {}, {}
    for e in log.events:
        if e.request_id >= from_request and e.domain == Domain.SEARCH and e.kind == EventKind.EXPOSURE:
            heads.setdefault(e.request_id, e)
            exposed.setdefault(e.request_id, set()).add(e.item_id)
    out = []
    for rid in sorted(heads):
        h = heads[rid]
        cands = np.asarray(log.candidate_lists[rid], dtype=np.int64)
        p = ground_truth_relevance(world, h.user_id, h.query_id, cands)
        y = np.random.default_rng([seed, 0x7E57, rid]).random(len(cands)) < p
        items = []
        for v, lab in zip(cands.tolist(), y.tolist()):
            if exposed_only and v not in exposed[rid]:
                continue
            hashes, dense = fz.item_features(v)
            flag = ExposureFlag.EXPOSED if v in exposed[rid] else ExposureFlag.UNEXPOSED
            items.append(ItemEntry(v, hashes, dense, flag, click_label=int(lab),
                                   label_source=LabelSource.IN_DOMAIN))
        out.append(RequestRecord(rid, Domain.SEARCH, h.user_id, h.query_id, h.timestamp,
                                 fz.user_hashes(h.user_id), fz.query_hashes(h.query_id),
                                 fz.context(h.query_id), items))
    return out


def benchmark_from_log(config: BenchmarkConfig, world, log, seed=0) -> Benchmark:
    """Split an existing log by time and build both training sets plus the labeled test set."""
    config.validate()
    n_req = len(log.candidate_lists)
    cut = int(round(n_req * (1.0 - config.test_fraction)))
    train_log = split_log(log, cut)
    es3_records, stats = build_dataset(train_log, world, config.es3)
    base_cfg = ES3Config(unexposed_expansion=False, attribution=False, searchification=False,
                         seed=config.es3.seed, threads=config.es3.threads)
    search_only, _ = build_dataset(train_log, world, base_cfg)
    test = oracle_test_records(log, world, cut, seed, config.test_exposed_only)
    return Benchmark(world, train_log, search_only, es3_records, test, stats)


def make_benchmark(config: BenchmarkConfig = BenchmarkConfig(), seed=0) -> Benchmark:
    config.validate()
    world = generate_world(config.world, seed)
    return benchmark_from_log(config, world, simulate(world, config.sim, seed), seed)

"""Flatten list-wise records into per-sample feature arrays, one array per block."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ValidationError
from ..es3.hashing import prehash_features


def domain_hash(domain_id):
    return prehash_features([("domain", int(domain_id))])[0]


# How the default block names are read off a (record, entry) pair.
_EXTRACTORS = {
    "user": lambda r, e: r.user_feature_hashes,
    "query": lambda r, e: r.query_feature_hashes,
    "item": lambda r, e: e.feature_hashes,
    "item_dense": lambda r, e: e.dense_features,
    "context": lambda r, e: r.context_features,
    "domain": lambda r, e: [domain_hash(r.domain_id)],
}


@dataclass
class Batch:
    """Samples in row order. Hash blocks hold bucket indices already reduced modulo the table size."""

    blocks: dict
    domain: np.ndarray
    user_bucket: np.ndarray
    click: np.ndarray
    conversion: np.ndarray
    request_id: np.ndarray
    item_id: np.ndarray
    user_id: np.ndarray
    query_id: np.ndarray
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.domain)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Batch({k: v[idx] for k, v in self.blocks.items()}, self.domain[idx], self.user_bucket[idx],
                     self.click[idx], self.conversion[idx], self.request_id[idx], self.item_id[idx],
                     self.user_id[idx], self.query_id[idx], {k: v[idx] for k, v in self.extra.items()})

    def with_domain(self, domain, config=None):
        """Copy with every row routed to ``domain``; a hashed ``domain`` block follows when ``config`` is given."""
        b = self.subset(np.arange(len(self)))
        b.domain = np.full(len(self), int(domain), dtype=np.int64)
        spec = next((s for s in config.blocks if s.name == "domain" and s.kind == "hash"), None) if config else None
        if spec is not None:
            b.blocks["domain"] = np.full_like(b.blocks["domain"], domain_hash(domain) % spec.table_size)
        return b


def encode_records(records, config, blocks_fn=None):
    """Encode every item entry of every record as one sample row.

    ``blocks_fn(record, entry) -> {block name: values}`` overrides the default
    extractors, which know the block names user, query, item, item_dense,
    context and domain.
    """
    specs = config.blocks
    if blocks_fn is None:
        unknown = [b.name for b in specs if b.name not in _EXTRACTORS]
        if unknown:
            raise ConfigError("blocks", f"no default extractor for block {unknown[0]!r}")
    cols = {b.name: [] for b in specs}
    domain, users, uids, qids, rids, iids, clicks, convs = [], [], [], [], [], [], [], []
    for r in records:
        for e in r.items:
            vals = blocks_fn(r, e) if blocks_fn else {b.name: _EXTRACTORS[b.name](r, e) for b in specs}
            if set(vals) != set(cols):
                raise ConfigError("blocks", f"feature blocks {sorted(vals)} != configured {sorted(cols)}")
            for b in specs:
                cols[b.name].append(vals[b.name])
            if e.click_label not in (0, 1) or e.conversion_label not in (0, 1):
                raise ValidationError(f"request {r.request_id} item {e.item_id}: unlabeled entry")
            domain.append(int(r.domain_id))
            users.append(r.user_feature_hashes[0] if r.user_feature_hashes else r.user_id)
            uids.append(r.user_id)
            qids.append(-1 if r.query_id is None else r.query_id)
            rids.append(r.request_id)
            iids.append(e.item_id)
            clicks.append(e.click_label)
            convs.append(e.conversion_label)
    return build_batch(config, cols, domain, users, clicks, convs, rids, iids, uids, qids)


def build_batch(config, cols, domain, user_keys, clicks, convs, rids=None, iids=None, uids=None, qids=None):
    """Assemble a :class:`Batch` from raw per-row columns."""
    n = len(domain)
    blocks = {}
    for b in config.blocks:
        raw = cols[b.name]
        if b.kind == "hash":
            arr = np.asarray(raw, dtype=np.uint64).reshape(n, -1 if n else b.width)
            if arr.shape[1] != b.width:
                raise ConfigError("blocks", f"block {b.name!r}: expected {b.width} ids, got {arr.shape[1]}")
            blocks[b.name] = (arr % np.uint64(b.table_size)).astype(np.int64)
        else:
            arr = np.asarray(raw, dtype=np.float64).reshape(n, -1 if n else b.width)
            if arr.shape[1] != b.width:
                raise ConfigError("blocks", f"block {b.name!r}: expected width {b.width}, got {arr.shape[1]}")
            blocks[b.name] = arr
    dom = np.asarray(domain, dtype=np.int64)
    users = np.asarray(user_keys, dtype=np.uint64) % np.uint64(config.user_table)
    ar = np.arange(n, dtype=np.int64)
    return Batch(blocks, dom, users.astype(np.int64), np.asarray(clicks, dtype=np.float64),
                 np.asarray(convs, dtype=np.float64),
                 ar if rids is None else np.asarray(rids, dtype=np.int64),
                 ar if iids is None else np.asarray(iids, dtype=np.int64),
                 ar if uids is None else np.asarray(uids, dtype=np.int64),
                 ar if qids is None else np.asarray(qids, dtype=np.int64))

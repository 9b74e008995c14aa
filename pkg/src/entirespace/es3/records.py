"""List-wise training records and their NDJSON encoding.

File layout: a header line ``{"format": "entirespace.listwise", "schema_version": 1}``
followed by one :class:`RequestRecord` per line. Hash values are unsigned
64-bit integers and may exceed 2**53; parse them as integers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..synthlog import Domain

LISTWISE_FORMAT = "entirespace.listwise"
LISTWISE_VERSION = 1


class ExposureFlag(str, enum.Enum):
    EXPOSED = "exposed"
    UNEXPOSED = "unexposed"


class LabelSource(str, enum.Enum):
    IN_DOMAIN = "in_domain"
    CROSS_DOMAIN_ATTRIBUTED = "cross_domain_attributed"
    SYNTHETIC_NEGATIVE = "synthetic_negative"
    NONE = "none"


class Origin(str, enum.Enum):
    SEARCH = "search"
    SEARCHIFIED = "searchified"


@dataclass
class ItemEntry:
    item_id: int
    feature_hashes: list
    dense_features: list
    exposure_flag: ExposureFlag
    click_label: int = 0
    conversion_label: int = 0
    label_source: LabelSource = LabelSource.NONE
    origin: Origin = Origin.SEARCH

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "feature_hashes": list(self.feature_hashes),
            "dense_features": list(self.dense_features),
            "exposure": self.exposure_flag.value,
            "click": self.click_label,
            "conversion": self.conversion_label,
            "label_source": self.label_source.value,
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["item_id"], d["feature_hashes"], d["dense_features"], ExposureFlag(d["exposure"]),
                   d["click"], d["conversion"], LabelSource(d["label_source"]), Origin(d["origin"]))


@dataclass
class RequestRecord:
    request_id: int
    domain_id: Domain
    user_id: int
    query_id: int
    timestamp: int
    user_feature_hashes: list
    query_feature_hashes: list
    context_features: list
    items: list = field(default_factory=list)
    synthetic: bool = False

    def copy(self) -> "RequestRecord":
        items = [ItemEntry(e.item_id, e.feature_hashes, e.dense_features, e.exposure_flag, e.click_label,
                           e.conversion_label, e.label_source, e.origin) for e in self.items]
        return RequestRecord(self.request_id, self.domain_id, self.user_id, self.query_id, self.timestamp,
                             self.user_feature_hashes, self.query_feature_hashes, self.context_features,
                             items, self.synthetic)

    def to_dict(self):
        return {
            "request_id": self.request_id,
            "domain": Domain(self.domain_id).label,
            "user_id": self.user_id,
            "query_id": self.query_id,
            "timestamp": self.timestamp,
            "synthetic": self.synthetic,
            "user_feature_hashes": list(self.user_feature_hashes),
            "query_feature_hashes": list(self.query_feature_hashes),
            "context_features": list(self.context_features),
            "items": [e.to_dict() for e in self.items],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["request_id"], Domain.parse(d["domain"]), d["user_id"], d["query_id"], d["timestamp"],
                   d["user_feature_hashes"], d["query_feature_hashes"], d["context_features"],
                   [ItemEntry.from_dict(x) for x in d["items"]], d["synthetic"])


def records_to_ndjson(records) -> str:
    head = json.dumps({"format": LISTWISE_FORMAT, "schema_version": LISTWISE_VERSION, "n_records": len(records)})
    return "\n".join([head] + [json.dumps(r.to_dict()) for r in records]) + "\n"


def records_from_ndjson(text: str) -> list:
    lines = [x for x in text.splitlines() if x.strip()]
    head = json.loads(lines[0])
    if head.get("format") != LISTWISE_FORMAT:
        raise ValueError("missing list-wise dataset header")
    if head.get("schema_version") != LISTWISE_VERSION:
        raise ValueError(f"unsupported list-wise schema version {head.get('schema_version')}")
    return [RequestRecord.from_dict(json.loads(x)) for x in lines[1:]]


def save_records(path, records):
    Path(path).write_text(records_to_ndjson(records))


def load_records(path):
    return records_from_ndjson(Path(path).read_text())

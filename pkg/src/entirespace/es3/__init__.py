"""Entire-space sample construction over simulated behavior logs."""

from .attribution import AttributionWindow, attribute_labels
from .hashing import Featurizer, prehash_features
from .pipeline import (
    ES3Config,
    DatasetStats,
    base_search_records,
    build_dataset,
    expand_unexposed,
    sample_without_replacement,
)
from .records import (
    ExposureFlag,
    ItemEntry,
    LabelSource,
    Origin,
    RequestRecord,
    load_records,
    records_from_ndjson,
    records_to_ndjson,
    save_records,
)
from .searchify import SearchHistory, SearchifyDeps, build_cooccurrence, searchify, synthesize_query

__all__ = [
    "AttributionWindow", "DatasetStats", "ES3Config", "ExposureFlag", "Featurizer", "ItemEntry",
    "LabelSource", "Origin", "RequestRecord", "SearchHistory", "SearchifyDeps", "attribute_labels",
    "base_search_records", "build_cooccurrence", "build_dataset", "expand_unexposed", "load_records",
    "prehash_features", "records_from_ndjson", "records_to_ndjson", "sample_without_replacement",
    "save_records", "searchify", "synthesize_query",
]

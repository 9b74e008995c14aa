"""Parameter checkpoints: one flat little-endian float64 blob plus a JSON manifest.

Manifest layout::

    {"format": "entirespace.checkpoint", "version": 1,
     "blob": "<file name>", "meta": {...},
     "params": {"<name>": {"shape": [..], "offset": <float64 index>}, ...}}

``offset`` counts float64 elements from the start of the blob; parameters are
stored in manifest order.
"""

import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "entirespace.checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_arrays: dict, meta=None):
    """Write ``<path>.json`` and ``<path>.bin``. Returns the manifest path."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "blob": blob_path.name,
        "meta": meta or {},
        "params": {},
    }
    offset = 0
    chunks = []
    for name, arr in named_arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        manifest["params"][name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.reshape(-1).tobytes())
        offset += arr.size
    blob_path.write_bytes(b"".join(chunks))
    man_path = path.with_suffix(".json")
    man_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return man_path


def load_checkpoint(path):
    """Return ``(named_arrays, meta)`` from a manifest written by :func:`save_checkpoint`."""
    man_path = Path(path).with_suffix(".json")
    manifest = json.loads(man_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{man_path}: not a checkpoint manifest")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{man_path}: unsupported checkpoint version {manifest.get('version')}")
    flat = np.frombuffer((man_path.parent / manifest["blob"]).read_bytes(), dtype="<f8")
    out = {}
    for name, spec in manifest["params"].items():
        n = int(np.prod(spec["shape"], dtype=np.int64))
        out[name] = flat[spec["offset"]:spec["offset"] + n].reshape(spec["shape"]).astype(np.float64)
    return out, manifest["meta"]

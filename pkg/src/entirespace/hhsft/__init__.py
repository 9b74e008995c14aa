"""Heterogeneous hierarchical feature transformer with domain-routed fusion."""

from .config import BlockSpec, ModelConfig, default_blocks, tiny_config
from .features import Batch, build_batch, domain_hash, encode_records
from .model import (
    HHSFT,
    batch_loss,
    config_json,
    dapga,
    dref,
    forward,
    gfa_layer,
    hfa_layer,
    init_params,
    mlp_apply,
    read_scores,
    representation,
    tokenize,
    write_scores,
)

__all__ = [
    "HHSFT", "Batch", "BlockSpec", "ModelConfig", "batch_loss", "build_batch", "config_json", "dapga",
    "default_blocks", "domain_hash", "dref", "encode_records", "forward", "gfa_layer", "hfa_layer",
    "init_params", "mlp_apply", "read_scores", "representation", "tiny_config", "tokenize", "write_scores",
]

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ConfigError


@dataclass(frozen=True)
class BlockSpec:
    """One feature block -> one token. ``kind`` is ``"hash"`` or ``"dense"``."""

    name: str
    kind: str
    width: int              # ids per row (hash) or vector length (dense)
    table_size: int = 0     # hash buckets (hash blocks only)
    emb_dim: int = 0        # embedding dim (hash blocks only)


def default_blocks(d_emb=16, n_user_hashes=4):
    """User, query and item hashes plus item-title and query embeddings.

    The domain id is not a token: it only routes (experts, gate, heads), so
    searchified samples look exactly like search samples to the tower.
    """
    return (
        BlockSpec("user", "hash", n_user_hashes, 512, 8),
        BlockSpec("query", "hash", 2, 256, 8),
        BlockSpec("item", "hash", 3, 1024, 8),
        BlockSpec("item_dense", "dense", d_emb),
        BlockSpec("context", "dense", d_emb),
    )


@dataclass(frozen=True)
class ModelConfig:
    blocks: tuple = field(default_factory=default_blocks)
    d_H: int = 16
    L_H: int = 1
    hfa_ffn_hidden: int = 32
    d_G: int = 8
    m: int = 2
    L_G: int = 1
    gfa_ffn_hidden: int = 32
    heads: int = 2
    N: int = 3
    d_E: int | None = None          # defaults to d_Z
    expert_hidden: tuple = (16,)
    head_hidden: int = 8
    user_table: int = 512
    user_emb_dim: int = 4
    domain_emb_dim: int = 4
    use_dref: bool = True
    use_dapga: bool = True
    residual_ln: bool = True
    dapga_reuse_experts: bool = True
    dapga_stop_gradient: bool = True
    dapga_dedup_current: bool = False
    conversion_heads: bool = False
    init_std: float | None = None   # None: 1/sqrt(fan_in)
    emb_init_std: float = 0.05
    dapga_query_init_std: float | None = 0.0
    seed: int = 0

    @property
    def n(self):
        return len(self.blocks)

    @property
    def d_Z(self):
        return self.m * self.d_G

    @property
    def expert_dim(self):
        return self.d_Z if self.d_E is None else self.d_E

    @property
    def domain_heads(self):
        """Per-domain heads come with the fusion modules; bare HHFI shares one head."""
        return self.use_dref or self.use_dapga

    def validate(self):
        if self.n < 2:
            raise ConfigError("blocks", "need at least two blocks")
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ConfigError("blocks", "block names must be unique")
        for b in self.blocks:
            if b.kind not in ("hash", "dense"):
                raise ConfigError("blocks", f"block {b.name!r}: kind must be 'hash' or 'dense'")
            if b.width < 1 or (b.kind == "hash" and (b.table_size < 1 or b.emb_dim < 1)):
                raise ConfigError("blocks", f"block {b.name!r}: invalid sizes")
        for f in ("d_H", "d_G", "m", "heads", "head_hidden", "L_H", "L_G"):
            if getattr(self, f) < 1:
                raise ConfigError(f, "must be >= 1")
        if self.N < 2:
            raise ConfigError("N", "need at least two domains")
        if self.d_H % self.heads:
            raise ConfigError("d_H", f"must be divisible by heads={self.heads}")
        if self.d_G % self.heads:
            raise ConfigError("d_G", f"must be divisible by heads={self.heads}")
        if self.use_dref and self.use_dapga and self.dapga_reuse_experts and self.expert_dim != self.d_Z:
            raise ConfigError("d_E", "shared DREF/DAPGA experts need d_E == d_Z")
        return self

    def scaled(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown model key")
        d = dict(d)
        if "blocks" in d:
            d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        if "expert_hidden" in d:
            d["expert_hidden"] = tuple(d["expert_hidden"])
        return cls(**d).validate()


def tiny_config(**kw):
    """n=3, d_H=8, L_H=1, m=2, d_G=4, L_G=1, N=2: small enough for full FD checks."""
    blocks = (
        BlockSpec("a", "hash", 2, 5, 3),
        BlockSpec("b", "dense", 3),
        BlockSpec("c", "hash", 1, 4, 2),
    )
    base = dict(blocks=blocks, d_H=8, L_H=1, hfa_ffn_hidden=6, d_G=4, m=2, L_G=1, gfa_ffn_hidden=6,
                heads=2, N=2, expert_hidden=(5,), head_hidden=3, user_table=5, user_emb_dim=2,
                domain_emb_dim=2, init_std=0.5, emb_init_std=0.5, dapga_query_init_std=0.5)
    base.update(kw)
    return ModelConfig(**base).validate()

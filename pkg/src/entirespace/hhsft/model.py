"""HHSFT forward pass: tokenization, HFA, GFA, DREF, DAPGA and per-domain heads.

Parameters live in a flat ``{name: Node}`` dict. Naming is what the isolation
checks key on: domain expert ``d`` owns ``exp.{d}.*`` (and ``dapga.exp.{d}.*``
when DAPGA keeps its own copies), its heads own ``head.{d}.*`` and
``head_conv.{d}.*``.

Every layer is batched over samples: arrays are ``[B, ...]``.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .. import nncore as nn
from ..errors import ConfigError, RoutingError, ShapeError
from .config import ModelConfig
from .features import Batch


def _trunc_normal(rng, shape, std):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(config: ModelConfig, seed=None):
    """Fresh parameters. Projections are truncated normal, biases and the gamma gate zero.

    With ``init_std=None`` each projection's std is ``1/sqrt(fan_in)`` so
    activations keep unit scale through the expert and attention stacks.
    ``dapga_query_init_std=0`` starts the DAPGA attention uniform over its rows.
    """
    c = config
    rng = np.random.default_rng([c.seed if seed is None else seed, 0x4855])
    p = {}

    def w(name, shape, std=c.init_std):
        if std is None:
            std = 1.0 / np.sqrt(shape[-2])
        p[name] = nn.param(_trunc_normal(rng, shape, std), name)

    def z(name, shape, fill=0.0):
        p[name] = nn.param(np.full(shape, fill), name)

    def mlp(prefix, dims):
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            w(f"{prefix}.W{i}", (a, b))
            z(f"{prefix}.b{i}", (b,))

    n, dH, dG, m, dZ, dE = c.n, c.d_H, c.d_G, c.m, c.d_Z, c.expert_dim
    for b in c.blocks:
        if b.kind == "hash":
            w(f"tok.{b.name}.emb", (b.table_size, b.emb_dim), c.emb_init_std)
            w(f"tok.{b.name}.W", (b.emb_dim, dH))
        else:
            w(f"tok.{b.name}.W", (b.width, dH))
        z(f"tok.{b.name}.b", (dH,))
    for layer in range(c.L_H):
        pre = f"hfa{layer}"
        for k in ("Wq", "Wk", "Wv"):
            w(f"{pre}.{k}", (n, dH, dH))
        w(f"{pre}.ffn.W1", (n, dH, c.hfa_ffn_hidden))
        z(f"{pre}.ffn.b1", (n, 1, c.hfa_ffn_hidden))
        w(f"{pre}.ffn.W2", (n, c.hfa_ffn_hidden, dH))
        z(f"{pre}.ffn.b2", (n, 1, dH))
        if c.residual_ln:
            for ln in ("ln1", "ln2"):
                z(f"{pre}.{ln}.g", (dH,), 1.0)
                z(f"{pre}.{ln}.b", (dH,))
    for layer in range(c.L_G):
        pre = f"gfa{layer}"
        d_in = n * dH if layer == 0 else dZ
        for k in ("Wq", "Wk", "Wv"):
            w(f"{pre}.{k}", (m, d_in, dG))
        mlp(f"{pre}.ffn", (dZ, c.gfa_ffn_hidden, dZ))
        if c.residual_ln:
            z(f"{pre}.ln1.g", (dG,), 1.0)
            z(f"{pre}.ln1.b", (dG,))
            z(f"{pre}.ln2.g", (dZ,), 1.0)
            z(f"{pre}.ln2.b", (dZ,))

    expert_dims = (dZ,) + tuple(c.expert_hidden) + (dE,)
    if c.use_dref:
        w("gate.W", (dZ, 2))
        z("gate.b", (2,))
        mlp("exp.s", expert_dims)
    if c.use_dref or (c.use_dapga and c.dapga_reuse_experts):
        for d in range(c.N):
            mlp(f"exp.{d}", expert_dims)
    if c.use_dapga:
        if not c.dapga_reuse_experts:
            in_dim = dE if c.use_dref else dZ
            for d in range(c.N):
                mlp(f"dapga.exp.{d}", (in_dim,) + tuple(c.expert_hidden) + (dE,))
        for k in ("Wq", "Wk", "Wv"):
            w(f"dapga.{k}", (dE, dE), c.dapga_query_init_std if k == "Wq" else c.init_std)
        w("dapga.emb_u", (c.user_table, c.user_emb_dim), c.emb_init_std)
        w("dapga.emb_d", (c.N, c.domain_emb_dim), c.emb_init_std)
        z("dapga.gamma.W", (c.user_emb_dim + c.domain_emb_dim, dE))
        z("dapga.gamma.b", (dE,))

    head_in = dE if (c.use_dref or c.use_dapga) else dZ
    head_names = [str(d) for d in range(c.N)] if c.domain_heads else ["shared"]
    kinds = ("head", "head_conv") if c.conversion_heads else ("head",)
    for kind in kinds:
        for h in head_names:
            mlp(f"{kind}.{h}", (head_in, c.head_hidden, 1))
    return p


def mlp_apply(x, params, prefix):
    """Affine layers with relu between them (none after the last)."""
    i = 0
    while f"{prefix}.W{i}" in params:
        if i:
            x = nn.relu(x)
        x = nn.add(nn.matmul(x, params[f"{prefix}.W{i}"]), params[f"{prefix}.b{i}"])
        i += 1
    if i == 0:
        raise ConfigError(prefix, "no such MLP in parameters")
    return x


def _mhsa(q, k, v, heads, trace):
    """Multi-head self-attention over the token axis of ``[B, T, d]`` inputs."""
    B, T, d = q.shape
    dh = d // heads

    def split(x):
        return nn.transpose(nn.reshape(x, (B, T, heads, dh)), (0, 2, 1, 3))

    weights = trace.setdefault("attention", []) if trace is not None else None
    out = nn.sdpa(split(q), split(k), split(v), weights_out=weights)
    return nn.reshape(nn.transpose(out, (0, 2, 1, 3)), (B, T, d))


def tokenize(batch: Batch, params, config: ModelConfig):
    """One ``d_H`` token per block, in configured block order: ``[B, n, d_H]``."""
    unknown = set(batch.blocks) - {b.name for b in config.blocks}
    missing = {b.name for b in config.blocks} - set(batch.blocks)
    if unknown or missing:
        raise ConfigError("blocks", f"unknown blocks {sorted(unknown)}, missing {sorted(missing)}")
    B = len(batch)
    toks = []
    for b in config.blocks:
        x = batch.blocks[b.name]
        if b.kind == "hash":
            table = params[f"tok.{b.name}.emb"]
            x = nn.mean(nn.embedding_lookup(table, x, table.shape[0]), axis=1)
        t = nn.add(nn.matmul(x, params[f"tok.{b.name}.W"]), params[f"tok.{b.name}.b"])
        toks.append(nn.reshape(t, (B, 1, config.d_H)))
    return nn.concat(toks, axis=1)


def hfa_layer(tokens, params, config: ModelConfig, layer=0, trace=None):
    """Token-specific Q/K/V, MHSA across tokens, token-specific FFN."""
    pre = f"hfa{layer}"
    B, n, d = tokens.shape
    Wq = params[f"{pre}.Wq"]
    if Wq.shape[0] != n or d != config.d_H:
        raise ShapeError(f"hfa_layer: tokens {tokens.shape} vs per-token weights {Wq.shape}")
    xt = nn.transpose(tokens, (1, 0, 2))  # [n, B, d]: one matmul batch per token

    def proj(W):
        return nn.transpose(nn.matmul(xt, W), (1, 0, 2))

    a = _mhsa(proj(Wq), proj(params[f"{pre}.Wk"]), proj(params[f"{pre}.Wv"]), config.heads, trace)
    if config.residual_ln:
        a = nn.layer_norm(nn.add(tokens, a), params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
    at = nn.transpose(a, (1, 0, 2))
    h = nn.relu(nn.add(nn.matmul(at, params[f"{pre}.ffn.W1"]), params[f"{pre}.ffn.b1"]))
    h = nn.add(nn.matmul(h, params[f"{pre}.ffn.W2"]), params[f"{pre}.ffn.b2"])
    out = nn.transpose(h, (1, 0, 2))
    if config.residual_ln:
        out = nn.layer_norm(nn.add(a, out), params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
    return out


def gfa_layer(x_flat, params, config: ModelConfig, layer=0, trace=None):
    """Composite projections of the full input vector into ``m`` tokens, MHSA, Global FFN.

    ``x_flat`` is ``[B, n*d_H]`` for the first layer and ``[B, m*d_G]`` after.
    Returns ``[B, m, d_G]``.
    """
    pre = f"gfa{layer}"
    B, d_in = x_flat.shape
    m, dG = config.m, config.d_G
    Wq = params[f"{pre}.Wq"]
    if Wq.shape[1] != d_in:
        raise ShapeError(f"gfa_layer: input {x_flat.shape} vs composite projection {Wq.shape}")
    x3 = nn.reshape(x_flat, (1, B, d_in))

    def proj(W):
        return nn.transpose(nn.matmul(x3, W), (1, 0, 2))  # [B, m, d_G]

    a = _mhsa(proj(Wq), proj(params[f"{pre}.Wk"]), proj(params[f"{pre}.Wv"]), config.heads, trace)
    if config.residual_ln:
        if d_in == m * dG:
            a = nn.add(a, nn.reshape(x_flat, (B, m, dG)))
        a = nn.layer_norm(a, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
    flat = nn.reshape(a, (B, m * dG))
    out = mlp_apply(flat, params, f"{pre}.ffn")
    if config.residual_ln:
        out = nn.layer_norm(nn.add(flat, out), params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
    return nn.reshape(out, (B, m, dG))


def _check_domains(domains, N):
    domains = np.asarray(domains, dtype=np.int64)
    if domains.size and (domains.min() < 0 or domains.max() >= N):
        bad = domains[(domains < 0) | (domains >= N)][0]
        raise RoutingError(f"domain id {int(bad)} outside [0, {N})")
    return domains


def _route(x, domains, fn):
    """``fn(d, rows_of_x)`` evaluated only on the rows of each domain, reassembled in row order."""
    parts, sets = [], []
    for d in np.unique(domains).tolist():
        ix = np.flatnonzero(domains == d)
        parts.append(fn(d, nn.take(x, ix)))
        sets.append(ix)
    return nn.assemble_rows(parts, sets, x.shape[0])


def dref(z, domains, params, config: ModelConfig, trace=None):
    """Softmax-gated mix of the shared expert and the sample's own domain expert."""
    domains = _check_domains(domains, config.N)
    g = nn.softmax(nn.add(nn.matmul(z, params["gate.W"]), params["gate.b"]), axis=-1)
    a_s = nn.index(g, (slice(None), slice(0, 1)))
    a_d = nn.index(g, (slice(None), slice(1, 2)))
    if trace is not None:
        trace["alpha"] = g.value
    f_s = mlp_apply(z, params, "exp.s")
    f_d = _route(z, domains, lambda d, rows: mlp_apply(rows, params, f"exp.{d}"))
    return nn.add(nn.elementwise_mul(a_s, f_s), nn.elementwise_mul(a_d, f_d))


def _dapga_prefix(config):
    return "exp" if config.dapga_reuse_experts else "dapga.exp"


def dapga(e, domains, user_bucket, params, config: ModelConfig, trace=None):
    """Attention from the live own-domain expert output over every domain's stopped output, then the gamma gate."""
    domains = _check_domains(domains, config.N)
    B = e.shape[0]
    pre = _dapga_prefix(config)
    N = config.N
    o_cur = _route(e, domains, lambda d, rows: mlp_apply(rows, params, f"{pre}.{d}"))
    dE = o_cur.shape[1]
    if config.dapga_stop_gradient:
        with nn.no_record():
            o_all = np.stack([mlp_apply(e, params, f"{pre}.{d}").value for d in range(N)], axis=1)
        if config.dapga_dedup_current:
            keep = np.array([[j for j in range(N) if j != d] for d in domains.tolist()], dtype=np.int64)
            o_all = np.take_along_axis(o_all, keep.reshape(B, max(N - 1, 0), 1), axis=1)
        stopped = nn.stop_gradient(o_all)
    else:
        if config.dapga_dedup_current:
            raise ConfigError("dapga_dedup_current", "needs dapga_stop_gradient")
        stopped = nn.concat([nn.reshape(mlp_apply(e, params, f"{pre}.{d}"), (B, 1, dE)) for d in range(N)], axis=1)
    O = nn.concat([nn.reshape(o_cur, (B, 1, dE)), stopped], axis=1)
    q = nn.reshape(nn.matmul(o_cur, params["dapga.Wq"]), (B, 1, dE))
    K = nn.matmul(O, params["dapga.Wk"])
    V = nn.matmul(O, params["dapga.Wv"])
    weights = trace.setdefault("dapga_attention", []) if trace is not None else None
    att = nn.reshape(nn.sdpa(q, K, V, weights_out=weights), (B, dE))
    emb_u = params["dapga.emb_u"]
    emb_d = params["dapga.emb_d"]
    ctx = nn.concat([nn.embedding_lookup(emb_u, user_bucket, emb_u.shape[0]),
                     nn.embedding_lookup(emb_d, domains, emb_d.shape[0])], axis=-1)
    gamma = nn.sigmoid(nn.add(nn.matmul(ctx, params["dapga.gamma.W"]), params["dapga.gamma.b"]))
    if trace is not None:
        trace["gamma"] = gamma.value
    return nn.elementwise_mul(gamma, att)


def representation(batch: Batch, params, config: ModelConfig, trace=None):
    """Everything below the heads: the vector each head reads, ``[B, *]``."""
    x = tokenize(batch, params, config)
    for layer in range(config.L_H):
        x = hfa_layer(x, params, config, layer, trace)
    B = len(batch)
    flat = nn.reshape(x, (B, config.n * config.d_H))
    for layer in range(config.L_G):
        flat = nn.reshape(gfa_layer(flat, params, config, layer, trace), (B, config.d_Z))
    h = flat
    if config.use_dref:
        h = dref(h, batch.domain, params, config, trace)
    if config.use_dapga:
        h = dapga(h, batch.domain, batch.user_bucket, params, config, trace)
    return h


def _head_logits(h, domains, params, config, kind, own_only):
    B = h.shape[0]
    if not config.domain_heads:
        logit = nn.reshape(mlp_apply(h, params, f"{kind}.shared"), (B,))
        if own_only:
            return logit
        col = nn.reshape(logit, (B, 1))
        return nn.concat([col] * config.N, axis=1)
    if own_only:
        out = _route(h, domains, lambda d, rows: mlp_apply(rows, params, f"{kind}.{d}"))
        return nn.reshape(out, (B,))
    return nn.concat([mlp_apply(h, params, f"{kind}.{d}") for d in range(config.N)], axis=1)


def forward(batch: Batch, params, config: ModelConfig, trace=None, own_only=False):
    """Click logits: ``[B, N]`` from every head, or ``[B]`` from each row's own head.

    With conversion heads enabled the result is a ``(click, conversion)`` pair.
    """
    domains = _check_domains(batch.domain, config.N)
    h = representation(batch, params, config, trace)
    click = _head_logits(h, domains, params, config, "head", own_only)
    if config.conversion_heads:
        return click, _head_logits(h, domains, params, config, "head_conv", own_only)
    return click


def batch_loss(batch: Batch, params, config: ModelConfig, reduction="sum", trace=None):
    """BCE of each sample against its own domain's head only."""
    out = forward(batch, params, config, trace, own_only=True)
    if config.conversion_heads:
        click, conv = out
        return nn.add(nn.bce_with_logits(click, batch.click, reduction),
                      nn.bce_with_logits(conv, batch.conversion, reduction))
    return nn.bce_with_logits(out, batch.click, reduction)


class HHSFT:
    """Model config plus its parameter dict, with training and scoring helpers."""

    SEARCH = 0

    def __init__(self, config: ModelConfig, seed=None, params=None):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, seed)

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return int(sum(p.value.size for p in self.params.values()))

    def forward(self, batch, trace=None, own_only=False):
        return forward(batch, self.params, self.config, trace, own_only)

    def loss(self, batch, reduction="sum", trace=None):
        return batch_loss(batch, self.params, self.config, reduction, trace)

    def predict_search(self, batch):
        """sigmoid of the search head, with routing forced to the search domain."""
        with nn.no_record():
            b = batch.with_domain(self.SEARCH, self.config)
            logits = forward(b, self.params, self.config, own_only=True)
            if self.config.conversion_heads:
                logits = logits[0]
            return nn.sigmoid(logits).value

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta["model_config"] = self.config.to_dict()
        nn.save_checkpoint(path, {k: p.value for k, p in self.params.items()}, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = nn.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["model_config"])
        model = cls(config)
        if set(arrays) != set(model.params):
            raise ConfigError("checkpoint", "parameter names do not match the stored model config")
        for k, v in arrays.items():
            if v.shape != model.params[k].shape:
                raise ShapeError(f"checkpoint {k}: stored {v.shape}, expected {model.params[k].shape}")
            model.params[k].value = np.array(v, dtype=np.float64)
        return model, meta


def write_scores(path, batch: Batch, scores):
    """CSV ``request_id,item_id,score`` with round-trippable float text."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["request_id", "item_id", "score"])
        for r, i, s in zip(batch.request_id.tolist(), batch.item_id.tolist(), np.asarray(scores).tolist()):
            w.writerow([r, i, repr(float(s))])


def read_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ([int(r["request_id"]) for r in rows], [int(r["item_id"]) for r in rows],
            np.array([float(r["score"]) for r in rows]))


def config_json(config: ModelConfig):
    return json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n"

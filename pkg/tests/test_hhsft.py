import dataclasses
import math

import numpy as np
import pytest
from hhsft_fixtures import FD_STEPS, live_model, random_batch, tiny_case

from entirespace import nncore as nn
from entirespace.errors import ConfigError, RoutingError
from entirespace.hhsft import (
    HHSFT,
    BlockSpec,
    ModelConfig,
    dapga,
    dref,
    gfa_layer,
    hfa_layer,
    read_scores,
    tiny_config,
    tokenize,
    write_scores,
)
from entirespace.hhsft.model import init_params, mlp_apply

# --- config ---------------------------------------------------------------


@pytest.mark.parametrize("kw, field", [
    (dict(d_H=9), "d_H"),
    (dict(d_G=5), "d_G"),
    (dict(N=1), "N"),
    (dict(blocks=(BlockSpec("a", "dense", 2),)), "blocks"),
    (dict(blocks=(BlockSpec("a", "dense", 2), BlockSpec("a", "dense", 3))), "blocks"),
    (dict(blocks=(BlockSpec("a", "sparse", 2), BlockSpec("b", "dense", 3))), "blocks"),
    (dict(d_E=7), "d_E"),
])
def test_config_rejects(kw, field):
    with pytest.raises(ConfigError) as ei:
        tiny_config(**kw)
    assert ei.value.field == field


def test_config_roundtrip_and_unknown_key():
    cfg = tiny_config(conversion_heads=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.d_Z == cfg.m * cfg.d_G
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "dropout": 0.1})


# --- tokenization -----------------------------------------------------------


def test_tokenize_shape_and_zero_case():
    cfg = tiny_config(blocks=(BlockSpec("x", "dense", 3), BlockSpec("y", "dense", 2)))
    m = HHSFT(cfg, seed=0)
    b = random_batch(cfg, np.random.default_rng(0), 4)
    assert tokenize(b, m.params, cfg).shape == (4, 2, cfg.d_H)
    for p in m.params.values():
        p.value[...] = 0.0
    b.blocks = {k: np.zeros_like(v) for k, v in b.blocks.items()}
    assert np.all(tokenize(b, m.params, cfg).value == 0.0)


def test_tokenize_unknown_block():
    cfg = tiny_config()
    b = random_batch(cfg, np.random.default_rng(0), 3)
    b.blocks["extra"] = b.blocks["b"]
    with pytest.raises(ConfigError):
        tokenize(b, HHSFT(cfg).params, cfg)


def test_swapping_blocks_swaps_tokens():
    cfg = tiny_config()
    swapped = dataclasses.replace(cfg, blocks=(cfg.blocks[1], cfg.blocks[0], cfg.blocks[2]))
    m = HHSFT(cfg, seed=3)
    b = random_batch(cfg, np.random.default_rng(1), 5)
    t1 = tokenize(b, m.params, cfg).value
    t2 = tokenize(b, m.params, swapped).value
    assert np.array_equal(t1[:, [1, 0, 2]], t2)


# --- HFA / GFA --------------------------------------------------------------


def test_hfa_single_token_attends_to_itself():
    cfg = dataclasses.replace(tiny_config(), blocks=(BlockSpec("a", "dense", 3),))
    params = init_params(cfg, 0)
    x = nn.Node(np.random.default_rng(0).normal(size=(4, 1, cfg.d_H)))
    trace = {}
    out = hfa_layer(x, params, cfg, trace=trace)
    assert out.shape == (4, 1, cfg.d_H)
    assert np.all(trace["attention"][0] == 1.0)


@pytest.mark.parametrize("residual_ln", [True, False])
def test_hfa_token_specificity(residual_ln):
    cfg = tiny_config(residual_ln=residual_ln)
    m = live_model(cfg, 0)
    row = np.random.default_rng(5).normal(size=cfg.d_H)
    x = nn.Node(np.tile(row, (2, cfg.n, 1)))
    out = hfa_layer(x, m.params, cfg).value
    assert not np.allclose(out[:, 0], out[:, 1])
    for k in ("Wq", "Wk", "Wv", "ffn.W1", "ffn.b1", "ffn.W2", "ffn.b2"):
        v = m.params[f"hfa0.{k}"].value
        v[1:] = v[0]
    tied = hfa_layer(x, m.params, cfg).value
    for i in range(1, cfg.n):
        assert np.array_equal(tied[:, 0], tied[:, i])


def test_gfa_single_output_token():
    cfg = tiny_config(m=1, d_G=4)
    params = init_params(cfg, 0)
    x = nn.Node(np.random.default_rng(0).normal(size=(3, cfg.n * cfg.d_H)))
    trace = {}
    out = gfa_layer(x, params, cfg, trace=trace)
    assert out.shape == (3, 1, 4)
    assert np.all(trace["attention"][0] == 1.0)


@pytest.mark.parametrize("n_blocks, d_H", [(2, 4), (3, 8), (5, 6)])
def test_gfa_output_shape(n_blocks, d_H):
    blocks = tuple(BlockSpec(f"b{i}", "dense", 2) for i in range(n_blocks))
    cfg = tiny_config(blocks=blocks, d_H=d_H, m=3, d_G=4)
    params = init_params(cfg, 0)
    x = nn.Node(np.ones((2, n_blocks * d_H)))
    assert gfa_layer(x, params, cfg).shape == (2, 3, 4)


# --- DREF / DAPGA -----------------------------------------------------------


def test_dref_saturated_gate_returns_shared_expert():
    cfg = tiny_config()
    m = live_model(cfg, 1)
    z = nn.Node(np.random.default_rng(2).normal(size=(4, cfg.d_Z)))
    m.params["gate.W"].value[...] = 0.0
    m.params["gate.b"].value[...] = [50.0, -50.0]
    e = dref(z, np.array([0, 1, 0, 1]), m.params, cfg).value
    fs = mlp_apply(z, m.params, "exp.s").value
    assert np.allclose(e, fs, rtol=0, atol=1e-30 + 1e-12 * np.abs(fs).max())


def test_dref_gate_sums_to_one_and_routing_error():
    cfg = tiny_config()
    m = live_model(cfg, 1)
    z = nn.Node(np.random.default_rng(3).normal(size=(50, cfg.d_Z)) * 5)
    trace = {}
    dref(z, np.arange(50) % 2, m.params, cfg, trace)
    assert np.all(np.abs(trace["alpha"].sum(axis=1) - 1.0) <= 1e-12)
    with pytest.raises(RoutingError):
        dref(z, np.full(50, 2), m.params, cfg)


def test_dref_other_expert_gets_exact_zero():
    m, b = tiny_case(seed=4, use_dapga=False)
    b = b.with_domain(0)
    with nn.Tape() as tape:
        loss = m.loss(b)
    nn.backward(tape, loss, m.parameters())
    others = [p for k, p in m.params.items() if k.startswith(("exp.1.", "head.1."))]
    assert others and all(np.all(p.grad == 0.0) for p in others)


def test_dapga_single_domain_identical_rows():
    cfg = dataclasses.replace(tiny_config(use_dref=False), N=1)
    params = init_params(cfg, 0)
    for k in ("dapga.gamma.W", "dapga.gamma.b"):
        params[k].value = np.random.default_rng(1).normal(size=params[k].shape)
    e = nn.Node(np.random.default_rng(0).normal(size=(3, cfg.d_Z)))
    dom = np.zeros(3, dtype=np.int64)
    users = np.arange(3)
    trace = {}
    out = dapga(e, dom, users, params, cfg, trace).value
    o = mlp_apply(e, params, "exp.0").value
    expect = trace["gamma"] * (o @ params["dapga.Wv"].value)
    assert np.allclose(out, expect, rtol=1e-12, atol=1e-15)


def test_dapga_zero_gate_halves():
    cfg = tiny_config()
    m = live_model(cfg, 2)
    m.params["dapga.gamma.W"].value[...] = 0.0
    m.params["dapga.gamma.b"].value[...] = 0.0
    e = nn.Node(np.random.default_rng(0).normal(size=(4, cfg.d_Z)))
    trace = {}
    out = dapga(e, np.array([0, 1, 1, 0]), np.arange(4), m.params, cfg, trace).value
    assert np.all(trace["gamma"] == 0.5)
    m.params["dapga.gamma.b"].value[...] = 1e3  # sigma -> 1
    full = dapga(e, np.array([0, 1, 1, 0]), np.arange(4), m.params, cfg).value
    assert np.allclose(out, 0.5 * full, rtol=1e-12, atol=0)


@pytest.mark.parametrize("stop", [True, False])
def test_dapga_isolation_and_negative_control(stop):
    m, b = tiny_case(seed=7, use_dref=False, dapga_stop_gradient=stop)
    b = b.with_domain(0)
    with nn.Tape() as tape:
        loss = m.loss(b)
    nn.backward(tape, loss, m.parameters())
    leak = max(float(np.abs(p.grad).max()) for k, p in m.params.items() if k.startswith("exp.1."))
    if stop:
        assert leak == 0.0
    else:
        assert leak > 0.0


def test_dapga_dedup_needs_stop_gradient():
    m, b = tiny_case(seed=1, dapga_dedup_current=True, dapga_stop_gradient=False)
    with pytest.raises(ConfigError):
        m.forward(b)


# --- forward, loss, prediction ---------------------------------------------


def test_forward_shape_and_determinism():
    m, b = tiny_case(seed=2, B=5)
    a1 = m.forward(b).value
    a2 = m.forward(b).value
    assert a1.shape == (5, m.config.N)
    assert np.array_equal(a1, a2)
    own = m.forward(b, own_only=True).value
    assert np.array_equal(own, a1[np.arange(5), b.domain])


def test_single_sample_neutral_logit_is_ln2():
    m, b = tiny_case(seed=0, B=1)
    b.click[:] = 1
    d = int(b.domain[0])
    m.params[f"head.{d}.W1"].value[...] = 0.0
    m.params[f"head.{d}.b1"].value[...] = 0.0
    assert math.isclose(float(m.loss(b).value), math.log(2), rel_tol=1e-15)


def test_mixed_batch_loss_is_sum_of_domain_losses():
    m, b = tiny_case(seed=5, B=9)
    whole = float(m.loss(b).value)
    parts = sum(float(m.loss(b.subset(np.flatnonzero(b.domain == d))).value) for d in range(m.config.N))
    assert abs(whole - parts) <= 1e-12 * max(1.0, abs(whole))


@pytest.mark.parametrize("naive", [False, True])
def test_domain_zero_batch_never_touches_other_head(naive):
    kw = dict(use_dref=False, use_dapga=False) if naive else {}
    m, b = tiny_case(seed=6, **kw)
    b = b.with_domain(0)
    with nn.Tape() as tape:
        loss = m.loss(b)
    nn.backward(tape, loss, m.parameters())
    heads = {k: p for k, p in m.params.items() if k.startswith("head.")}
    if naive:
        assert all(k.startswith("head.shared.") for k in heads)
    else:
        assert all(np.all(p.grad == 0.0) for k, p in heads.items() if k.startswith("head.1."))


def test_predict_search_matches_search_head():
    m, b = tiny_case(seed=3, B=6)
    p = m.predict_search(b)
    logits = m.forward(b.with_domain(0)).value[:, 0]
    assert np.allclose(p, 1 / (1 + np.exp(-logits)), rtol=1e-14, atol=0)
    assert np.all((p > 0) & (p < 1))
    m.params["head.0.b1"].value += 0.5
    assert np.all(m.predict_search(b) > p)


# --- gradients ----------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    {},
    dict(residual_ln=False),
    dict(conversion_heads=True),
    dict(dapga_reuse_experts=False),
    dict(use_dref=False, use_dapga=False),
])
def test_gradients_match_finite_differences(kw):
    m, b = tiny_case(seed=1, **kw)
    res = nn.grad_check(lambda: m.loss(b), m.parameters(), eps=FD_STEPS, order=4, retry_above=1e-6,
                        max_coords=12, rng=np.random.default_rng(0))
    assert res.max_relative_error < 1e-5, res.worst


# --- persistence --------------------------------------------------------------


def test_checkpoint_and_scores_roundtrip(tmp_path):
    m, b = tiny_case(seed=9)
    m.save(tmp_path / "ck", meta={"step": 3})
    m2, meta = HHSFT.load(tmp_path / "ck")
    assert meta["step"] == 3 and m2.config == m.config
    assert np.array_equal(m.forward(b).value, m2.forward(b).value)
    s = m.predict_search(b)
    write_scores(tmp_path / "s.csv", b, s)
    rids, iids, s2 = read_scores(tmp_path / "s.csv")
    assert np.array_equal(s, s2) and rids == b.request_id.tolist()

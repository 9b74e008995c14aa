import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entirespace import nncore as nn
from entirespace.errors import ContractError, ShapeError, ValidationError
from entirespace.nncore import Node, Tape, backward, param


def fd_grad(f, arrays, eps=1e-5):
    """Plain central differences, independent of nncore.gradcheck."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + eps
            fp = f()
            a[i] = orig - eps
            fm = f()
            a[i] = orig
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def check_op(build, shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    w = [None]

    def value():
        out = build(*[Node(a) for a in arrays]).value
        if w[0] is None:
            w[0] = rng.normal(size=out.shape)
        return float((out * w[0]).sum())

    value()
    nodes = [param(a) for a in arrays]
    with Tape() as tape:
        out = build(*nodes)
        loss = nn.reduce_sum(nn.elementwise_mul(out, Node(w[0])))
    backward(tape, loss, nodes)
    # nodes share buffers with arrays, so fd perturbs what build reads
    numeric = fd_grad(value, arrays)
    for n, g in zip(nodes, numeric):
        assert rel_err(n.grad, g) < tol


@pytest.mark.parametrize(
    "build,shapes",
    [
        (nn.matmul, [(3, 4), (4, 2)]),
        (nn.matmul, [(2, 3, 4), (4, 5)]),
        (nn.matmul, [(3, 2, 4), (3, 4, 2)]),
        (nn.add, [(3, 4), (4,)]),
        (nn.sub, [(3, 4), (3, 1)]),
        (nn.elementwise_mul, [(3, 4), (3, 1)]),
        (lambda a, b: nn.concat([a, b], axis=1), [(2, 3), (2, 2)]),
        (nn.sigmoid, [(4, 3)]),
        (lambda a: nn.softmax(a, axis=-1), [(3, 5)]),
        (lambda a: nn.softmax(a, axis=0), [(3, 5)]),
        (lambda a, g, b: nn.layer_norm(a, g, b), [(4, 6), (6,), (6,)]),
        (lambda a: nn.mean(a, axis=1), [(3, 4, 2)]),
        (lambda a: nn.transpose(a, (1, 0, 2)), [(2, 3, 4)]),
        (lambda a: nn.take(a, [2, 0]), [(4, 3)]),
        (lambda q, k, v: nn.sdpa(q, k, v), [(5,), (4, 5), (4, 3)]),
        (lambda q, k, v: nn.sdpa(q, k, v), [(2, 3, 4), (2, 6, 4), (2, 6, 2)]),
    ],
)
def test_primitive_adjoints_match_finite_differences(build, shapes):
    check_op(build, shapes)


def test_relu_adjoint_away_from_kink():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 4))
    a[np.abs(a) < 0.05] = 0.3
    check_op(nn.relu, [a.shape], seed=3)  # fresh draw, kinks are measure-zero
    x = param(a)
    with Tape() as tape:
        loss = nn.reduce_sum(nn.relu(x))
    backward(tape, loss)
    assert np.array_equal(x.grad, (a > 0).astype(float))


def test_embedding_lookup_gradient_accumulates_repeats():
    table = param(np.arange(12.0).reshape(4, 3))
    ids = np.array([[1, 5], [1, 2]], dtype=np.uint64)  # 5 % 4 == 1
    with Tape() as tape:
        out = nn.embedding_lookup(table, ids, 4)
        loss = nn.reduce_sum(out)
    assert out.shape == (2, 2, 3)
    assert np.array_equal(out.value[0, 1], table.value[1])
    backward(tape, loss)
    assert np.array_equal(table.grad[:, 0], [0.0, 3.0, 1.0, 0.0])


def test_embedding_modulus_must_match_rows():
    with pytest.raises(ShapeError):
        nn.embedding_lookup(Node(np.zeros((4, 2))), [1], 5)


def test_matmul_identity_and_shape_error():
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(nn.matmul(Node(np.eye(3)), Node(x)).value, x)
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 4\)"):
        nn.matmul(Node(x), Node(x))


def test_concat_single_is_identity():
    x = Node(np.ones((2, 2)))
    assert nn.concat([x]) is x


def test_softmax_closed_form():
    out = nn.softmax(Node(np.array([[0.0, math.log(3.0)], [2.0, 2.0]]))).value
    assert np.allclose(out[0], [0.25, 0.75], atol=1e-15, rtol=0)
    assert np.array_equal(out[1], [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_normalized(xs):
    y = nn.softmax(Node(np.array([xs]))).value
    assert np.all(y >= 0)
    assert abs(y.sum() - 1.0) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-700, 700))
def test_sigmoid_symmetry(x):
    s = nn.sigmoid(Node(np.array([x, -x]))).value
    assert 0 <= s[0] <= 1
    assert abs(s[0] + s[1] - 1.0) <= 1e-15


def test_sigmoid_at_zero():
    assert nn.sigmoid(Node(np.zeros(1))).value[0] == 0.5


def test_sdpa_degenerate_cases():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(4, 3))
    k = np.tile(rng.normal(size=(1, 5)), (4, 1))
    out = nn.sdpa(Node(rng.normal(size=5)), Node(k), Node(v)).value
    assert np.allclose(out, v.mean(axis=0), rtol=0, atol=1e-14)
    single = nn.sdpa(Node(rng.normal(size=5)), Node(k[:1]), Node(v[:1])).value
    assert np.array_equal(single, v[0])
    with pytest.raises(ShapeError):
        nn.sdpa(Node(np.ones(5)), Node(np.ones((4, 4))), Node(v))


def test_stop_gradient_blocks_exactly():
    x = param(np.random.default_rng(2).normal(size=(3, 3)))
    sg = nn.stop_gradient(x)
    assert np.array_equal(sg.value, x.value)
    with Tape() as tape:
        loss = nn.reduce_sum(nn.stop_gradient(x))
    backward(tape, loss, [x])
    assert np.array_equal(x.grad, np.zeros((3, 3))) and not np.signbit(x.grad).any()

    with Tape() as tape:
        loss = nn.reduce_sum(nn.elementwise_mul(x, nn.stop_gradient(x)))
    backward(tape, loss, [x])
    # hand-written adjoint: only the live factor is differentiated
    assert np.array_equal(x.grad, x.value)


def test_bce_values():
    assert nn.bce_loss(Node(np.zeros(1)), [1]).value == pytest.approx(math.log(2), abs=1e-15)
    assert nn.bce_loss(Node(np.array([40.0, -40.0])), [1, 0]).value < 1e-15
    rng = np.random.default_rng(5)
    x = rng.normal(size=64) * 3
    y = rng.integers(0, 2, size=64)
    p = 1 / (1 + np.exp(-x))
    direct = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert abs(nn.bce_loss(Node(x), y).value - direct) < 1e-12
    assert abs(nn.bce_loss(Node(x), y, reduction="sum").value - 64 * direct) < 1e-10
    with pytest.raises(ValidationError):
        nn.bce_loss(Node(x[:2]), [0, 2])
    check_op(lambda a: nn.bce_loss(a, y[:6]), [(6,)])


def test_backward_contracts():
    w = param(np.random.default_rng(0).normal(size=(2, 3)))
    x = np.array([[1.0], [2.0], [3.0]])
    unused = param(np.ones(4))
    with Tape() as tape:
        y = nn.matmul(w, Node(x))
        loss = nn.reduce_sum(y)
    backward(tape, loss, [w, unused])
    assert np.array_equal(w.grad, np.ones((2, 1)) @ x.T)
    assert np.array_equal(unused.grad, np.zeros(4))
    with pytest.raises(ContractError):
        backward(tape, y)


def test_backward_is_linear():
    rng = np.random.default_rng(7)
    w = param(rng.normal(size=(4, 4)))
    x = Node(rng.normal(size=(3, 4)))

    def grads(which):
        with Tape() as tape:
            h = nn.sigmoid(nn.matmul(x, w))
            l1 = nn.reduce_sum(nn.elementwise_mul(h, h))
            l2 = nn.reduce_sum(nn.softmax(h))
            loss = {"1": l1, "2": l2, "12": nn.add(l1, l2)}[which]
        backward(tape, loss, [w])
        return w.grad.copy()

    assert np.max(np.abs(grads("12") - grads("1") - grads("2"))) <= 1e-12


def test_grad_check_quadratic_and_kink_filter():
    a = param(np.array([1.5, -2.0, 0.25]))

    def quad():
        return nn.reduce_sum(nn.elementwise_mul(a, a))

    res = nn.grad_check(quad, [a])
    assert res.max_relative_error < 1e-9 and res.checked == 3

    k = param(np.array([0.0, 1.0, -1.0]))
    res = nn.grad_check(lambda: nn.reduce_sum(nn.relu(k)), [k])
    assert res.skipped_kinks == 1 and res.checked == 2
    assert res.max_relative_error < 1e-9


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([0.5, -1e-300])}
    man = nn.save_checkpoint(tmp_path / "ckpt", arrays, meta={"step": 3})
    raw = (tmp_path / "ckpt.bin").read_bytes()
    assert len(raw) == 8 * 8
    assert np.frombuffer(raw[:8], "<f8")[0] == 0.0
    back, meta = nn.load_checkpoint(man)
    assert meta == {"step": 3}
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])

"""Value nodes, the recording tape, and reverse accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ContractError

_ACTIVE: list["Tape"] = []


class Node:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("value", "grad", "requires_grad", "stop_grad", "name")

    def __init__(self, value, requires_grad=False, name=None, stop_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.stop_grad = stop_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or "node"
        return f"Node({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def param(value, name=None) -> Node:
    return Node(value, requires_grad=True, name=name)


@dataclass
class TapeEntry:
    kind: str
    inputs: tuple
    output: Node
    backward: Callable


@dataclass(eq=False)
class Tape:
    entries: list = field(default_factory=list)

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        for i in range(len(_ACTIVE) - 1, -1, -1):
            if _ACTIVE[i] is self:
                del _ACTIVE[i]
                break
        return False

    def __len__(self):
        return len(self.entries)


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


class no_record:
    """Context in which ops compute values without logging to any tape."""

    def __enter__(self):
        _ACTIVE.append(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False


def record(kind, inputs, value, backward_fn) -> Node:
    """Wrap ``value`` in a node and log the op if any input needs a gradient."""
    tape = active_tape()
    needs = tape is not None and any(n.requires_grad for n in inputs)
    out = Node(value, requires_grad=needs)
    if needs:
        tape.entries.append(TapeEntry(kind, tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Node, params=None) -> dict:
    """Reverse-accumulate d(loss)/d(node) and store it on every leaf's ``.grad``.

    Leaves listed in ``params`` but unreachable from ``loss`` get an exact zero
    gradient. Returns ``{id(node): grad}`` for the leaves.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    nodes = {id(loss): loss}
    produced = set()
    for entry in reversed(tape.entries):
        key = id(entry.output)
        produced.add(key)
        g = grads.pop(key, None)
        if g is None:
            continue
        in_grads = entry.backward(g)
        for node, gi in zip(entry.inputs, in_grads):
            if gi is None or not node.requires_grad:
                continue
            k = id(node)
            if k in grads:
                grads[k] = grads[k] + gi
            else:
                grads[k] = gi
                nodes[k] = node
    leaves = {}
    for k, g in grads.items():
        if k in produced:
            continue
        node = nodes[k]
        node.grad = g
        leaves[k] = g
    if params is not None:
        for p in params:
            if id(p) not in leaves:
                p.grad = np.zeros_like(p.value)
                leaves[id(p)] = p.grad
    return leaves

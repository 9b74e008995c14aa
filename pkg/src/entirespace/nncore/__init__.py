"""Small float64 array autodiff: tape recording, reverse mode, FD checks."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, grad_check
from .ops import (
    add,
    assemble_rows,
    bce_loss,
    bce_with_logits,
    concat,
    elementwise_mul,
    embedding_lookup,
    frozen_stops,
    index,
    layer_norm,
    matmul,
    mean,
    relu,
    reshape,
    scale,
    sdpa,
    sigmoid,
    softmax,
    stop_gradient,
    sub,
    take,
    transpose,
)
from .ops import sum as reduce_sum
from .optim import Adam
from .tape import Node, Tape, backward, no_record, param

__all__ = [
    "Adam", "GradCheckResult", "Node", "Tape", "add", "assemble_rows", "backward",
    "bce_loss", "bce_with_logits", "concat", "elementwise_mul", "embedding_lookup", "frozen_stops",
    "grad_check", "index", "layer_norm", "load_checkpoint", "matmul", "mean", "no_record", "param",
    "reduce_sum", "relu", "reshape", "save_checkpoint", "scale", "sdpa", "sigmoid",
    "softmax", "stop_gradient", "sub", "take", "transpose",
]

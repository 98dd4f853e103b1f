"""Dense/sparse linear algebra with a reverse-mode differentiation tape."""

from .tensor import Tape, Tensor, active_tape, backward, grad, paused, recording
from .sparse import SparseMatrix, spmm
from . import ops
from .ops import (
    add, broadcast_to, concat, cosine_rows, div, dropout, exp, l2_normalize,
    log, logsumexp_rows, matmul, max_, mean, mul, narrow, neg, ones, prelu, sub,
    reshape, scalar_mul, scatter_rows, sigmoid, softplus, sqrt, sum_,
    take_rows, transpose, xavier_uniform, zeros,
)
from .gradcheck import check_gradients, finite_difference, standard_battery

__all__ = [
    "Tape", "Tensor", "active_tape", "backward", "grad", "paused",
    "recording", "SparseMatrix", "spmm", "ops",
    "add", "broadcast_to", "concat", "cosine_rows", "div", "dropout", "exp",
    "l2_normalize", "log", "logsumexp_rows", "matmul", "max_", "mean", "mul",
    "narrow", "neg", "ones", "prelu", "reshape", "scalar_mul", "scatter_rows",
    "sigmoid", "softplus", "sqrt", "sub", "sum_", "take_rows", "transpose",
    "xavier_uniform", "zeros", "check_gradients", "finite_difference",
    "standard_battery",
]

from . import ops
from .gradcheck import check_parameters, finite_diff_check, numeric_grad, relative_error
from .ops import (
    abs,
    add,
    concat,
    conv2d,
    cosine_sim,
    div,
    exp,
    getitem,
    global_avg_pool,
    layernorm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    norm,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    silu,
    softmax,
    softplus,
    sqrt,
    stack,
    sub,
    sum,
    take,
    transpose,
)
from .serialize import read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor
from .tensor import Tape, Tensor, backward

__all__ = [name for name in dir() if not name.startswith("_")]

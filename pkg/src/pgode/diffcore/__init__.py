from .engine import (
    ScatterPlan,
    Tape,
    Tensor,
    add,
    backward,
    broadcast_to,
    concat,
    exp,
    gather_rows,
    log,
    matmul,
    mean_,
    mul,
    neg,
    record_and_eval,
    relu,
    reshape,
    scatter_add_rows,
    slice_,
    softmax,
    softplus,
    sqrt,
    sub,
    sum_,
    tanh,
    transpose,
)
from .checkpoint import load_tensors, save_tensors
from .gradcheck import GradCheckResult, grad_check

__all__ = [
    "ScatterPlan", "Tape", "Tensor", "add", "backward", "broadcast_to",
    "concat", "exp", "gather_rows", "log", "matmul", "mean_", "mul", "neg",
    "record_and_eval", "relu", "reshape", "scatter_add_rows", "slice_",
    "softmax", "softplus", "sqrt", "sub", "sum_", "tanh", "transpose",
    "load_tensors", "save_tensors", "GradCheckResult", "grad_check",
]

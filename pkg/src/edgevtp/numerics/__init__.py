from .tensor import (
    ContractError,
    DimensionError,
    Tape,
    TapeNode,
    Tensor,
    add,
    backward,
    concat,
    count_ops,
    current_tape,
    dropout,
    layer_norm,
    leaky_relu,
    linear,
    matmul,
    mean_axis,
    mul,
    neighbor_sum,
    reshape,
    scaled_dot_attention,
    softmax,
    square,
    sub,
    sum_all,
    sum_axis,
    take_rows,
    transpose,
)
from . import container
from .init import kaiming_uniform

__all__ = [
    "ContractError", "DimensionError", "Tape", "TapeNode", "Tensor", "add",
    "backward", "concat", "container", "count_ops", "current_tape", "dropout",
    "kaiming_uniform", "layer_norm", "leaky_relu", "linear", "matmul",
    "mean_axis", "mul", "neighbor_sum", "reshape", "scaled_dot_attention",
    "softmax", "square", "sub", "sum_all", "sum_axis", "take_rows", "transpose",
]

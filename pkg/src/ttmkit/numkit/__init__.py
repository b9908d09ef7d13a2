from .tensor import (
    ContractError,
    DimensionError,
    NonFiniteError,
    Tensor,
    as_tensor,
    check_finite,
    concat,
    cross3,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    parameter,
    softmax,
    stack,
)
from .optim import (
    ParameterSet,
    adam_step,
    checkpoint_bytes,
    clip_grad_norm,
    grad_norm,
    load_checkpoint,
    parse_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from .gradcheck import finite_difference_check

__all__ = [
    "ContractError",
    "DimensionError",
    "NonFiniteError",
    "ParameterSet",
    "Tensor",
    "adam_step",
    "as_tensor",
    "check_finite",
    "checkpoint_bytes",
    "clip_grad_norm",
    "concat",
    "cross3",
    "finite_difference_check",
    "gelu",
    "grad_norm",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "no_grad",
    "parameter",
    "parse_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "softmax",
    "stack",
]

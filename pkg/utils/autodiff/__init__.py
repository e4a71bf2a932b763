from .tensor import (
    Function,
    Tape,
    Tensor,
    as_tensor,
    backward,
    get_default_dtype,
    is_grad_enabled,
    matmul,
    mean,
    no_grad,
    set_default_dtype,
)
from .functional import (
    add,
    batch_norm,
    concat,
    dropout,
    einsum,
    glu,
    l1_distance,
    layer_norm,
    length_mask,
    log_softmax,
    logsumexp,
    masked_fill,
    mul,
    pad,
    relu,
    scale,
    sigmoid,
    softmax,
    stack_arrays,
    swish,
    take,
    take_along_last,
    tanh,
    where,
)
from .functional import sum as tensor_sum
from .conv import avg_pool, conv, max_pool, output_extent
from .optim import Adam, AdamState, NoamSchedule, adam_step
from .gradcheck import gradcheck, numeric_grad, relative_error

__all__ = [
    "Adam",
    "AdamState",
    "Function",
    "NoamSchedule",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "avg_pool",
    "backward",
    "batch_norm",
    "concat",
    "conv",
    "dropout",
    "einsum",
    "get_default_dtype",
    "glu",
    "gradcheck",
    "is_grad_enabled",
    "l1_distance",
    "layer_norm",
    "length_mask",
    "log_softmax",
    "logsumexp",
    "masked_fill",
    "matmul",
    "max_pool",
    "mean",
    "mul",
    "no_grad",
    "numeric_grad",
    "output_extent",
    "pad",
    "relative_error",
    "relu",
    "scale",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "stack_arrays",
    "swish",
    "take",
    "take_along_last",
    "tanh",
    "tensor_sum",
    "where",
]

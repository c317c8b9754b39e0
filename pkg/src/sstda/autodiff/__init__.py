from .tensor import (
    Tensor,
    add,
    clip,
    concat,
    exp,
    grad_reverse,
    log,
    matmul,
    mul,
    relu,
    sigmoid,
    stack,
    sub,
    tanh,
    tmean,
    tsum,
)
from .layers import (
    BatchNormState,
    batchnorm2d,
    conv2d,
    gru_forward,
    init_gru_params,
    linear,
    maxpool2d,
    mse_loss,
    weighted_bce,
)
from .optim import AdamState, adam_step, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "clip", "concat", "exp", "grad_reverse", "log", "matmul",
    "mul", "relu", "sigmoid", "stack", "sub", "tanh", "tmean", "tsum",
    "BatchNormState", "batchnorm2d", "conv2d", "gru_forward", "init_gru_params",
    "linear", "maxpool2d", "mse_loss", "weighted_bce",
    "AdamState", "adam_step", "zero_grads",
    "load_checkpoint", "save_checkpoint",
]

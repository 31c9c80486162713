"""Numpy-based reverse-mode autodiff, layers, optimizer and checkpoints."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .layers import (
    encoder_layer_forward,
    init_encoder_layer,
    init_mlp,
    masked_mean_pool,
    mlp_forward,
    pad_sequences,
)
from .params import ParamSet, adam_step, xavier_uniform
from .tensor import (
    NonFiniteError,
    Tensor,
    abs_,
    add,
    backward,
    bce_with_logits,
    concat,
    cross_entropy_logits,
    dropout,
    layer_norm,
    matmul,
    mean_all,
    mul,
    neg,
    relu,
    reshape,
    select,
    softmax,
    sub,
    sum_axis,
    transpose,
)

__all__ = [
    "CheckpointError",
    "NonFiniteError",
    "ParamSet",
    "Tensor",
    "abs_",
    "adam_step",
    "add",
    "backward",
    "bce_with_logits",
    "concat",
    "cross_entropy_logits",
    "dropout",
    "encoder_layer_forward",
    "finite_difference_check",
    "init_encoder_layer",
    "init_mlp",
    "layer_norm",
    "load_checkpoint",
    "masked_mean_pool",
    "matmul",
    "mean_all",
    "mlp_forward",
    "mul",
    "neg",
    "pad_sequences",
    "relu",
    "reshape",
    "save_checkpoint",
    "select",
    "softmax",
    "sub",
    "sum_axis",
    "transpose",
    "xavier_uniform",
]

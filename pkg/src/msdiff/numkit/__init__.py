"""Minimal tensor autodiff, AdamW and checkpoint I/O."""

from .checkpoint import CheckpointError, digest, load_params, params_digest, save_params
from .gradcheck import grad_check, numeric_grad, tape_grad
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    RMS_EPS,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    build_tape,
    concat,
    gelu,
    matmul,
    mean,
    mse,
    mul,
    narrow,
    reshape,
    rms_norm,
    softmax,
    softmax_cross_entropy,
    sub,
    sum_,
    swap_last,
    transpose,
)

__all__ = [
    "AdamW", "AdamWState", "CheckpointError", "RMS_EPS", "ShapeError", "Tensor",
    "adamw_step", "add", "as_tensor", "build_tape", "concat", "digest", "gelu",
    "grad_check", "load_params", "matmul", "mean", "mse", "mul", "narrow",
    "numeric_grad", "params_digest", "reshape", "rms_norm", "save_params",
    "softmax", "softmax_cross_entropy", "sub", "sum_", "swap_last", "tape_grad",
    "transpose",
]

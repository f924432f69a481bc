"""Dense tensors with tape-based reverse-mode differentiation, plus Adam."""

from pivot_align.diffcore import ops
from pivot_align.diffcore.gradcheck import check_gradients, numeric_grad, relative_error
from pivot_align.diffcore.optim import ParamStore, adam_step, clip_grad_norm, global_grad_norm
from pivot_align.diffcore.tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    default_dtype,
    precision_name,
    set_precision,
)

__all__ = [
    'ParamStore',
    'Tape',
    'Tensor',
    'adam_step',
    'as_tensor',
    'backward',
    'check_gradients',
    'clip_grad_norm',
    'current_tape',
    'default_dtype',
    'global_grad_norm',
    'numeric_grad',
    'ops',
    'precision_name',
    'relative_error',
    'set_precision',
]

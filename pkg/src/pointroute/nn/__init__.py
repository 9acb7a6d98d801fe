from .checkpoint import load_checkpoint, save_checkpoint
from .fdcheck import finite_difference_check
from .ops import (
    ff_backward,
    ff_forward_cached,
    layer_norm_backward,
    layer_norm_forward,
    linear_backward,
    linear_forward,
    mha_backward,
    mha_forward,
    mha_forward_cached,
    relu_backward,
    relu_forward,
    softmax_backward,
    softmax_rows,
)
from .params import ParamStore
from .reversible import (
    rev_block_forward,
    rev_block_inverse,
    rev_stack_backward,
    rev_stack_forward,
    rev_stack_inverse,
)

__all__ = [
    "ParamStore",
    "finite_difference_check",
    "load_checkpoint",
    "save_checkpoint",
    "mha_forward",
    "mha_forward_cached",
    "mha_backward",
    "ff_forward_cached",
    "ff_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "linear_forward",
    "linear_backward",
    "relu_forward",
    "relu_backward",
    "softmax_rows",
    "softmax_backward",
    "rev_block_forward",
    "rev_block_inverse",
    "rev_stack_forward",
    "rev_stack_inverse",
    "rev_stack_backward",
]

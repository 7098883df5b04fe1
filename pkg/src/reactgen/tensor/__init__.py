from reactgen.tensor.core import (
    GradTape,
    Tensor,
    as_tensor,
    clip,
    concat,
    default_dtype,
    exp,
    log,
    matmul,
    no_grad,
    pad_last,
    repeat_last,
    set_default_dtype,
    take,
    using_dtype,
    where,
)
from reactgen.tensor.functional import (
    activation,
    conv1d,
    gelu,
    layer_norm,
    relu,
    silu,
    smooth_l1,
    softmax_rows,
)
from reactgen.tensor.gradcheck import grad_check
from reactgen.tensor.module import LayerNorm, Linear, Module, ModuleList, Parameter
from reactgen.tensor.optim import AdamW, check_finite_loss, warmup_lr

__all__ = [
    "AdamW", "GradTape", "LayerNorm", "Linear", "Module", "ModuleList",
    "Parameter", "Tensor", "activation", "as_tensor", "check_finite_loss",
    "clip", "concat", "conv1d", "default_dtype", "exp", "gelu", "grad_check",
    "layer_norm", "log", "matmul", "no_grad", "pad_last", "relu",
    "repeat_last", "set_default_dtype", "silu", "smooth_l1", "softmax_rows",
    "take", "using_dtype", "warmup_lr", "where",
]

from . import ops
from .core import (Node, Tensor, as_tensor, backward, check_finite, clear_tape,
                   default_dtype, get_default_dtype, no_grad, set_check_finite,
                   set_default_dtype, tape_size)
from .gradcheck import corrupt_backward, grad_check
from .ops import (abs, add, concat, div, dropout, gather, gelu, getitem, layer_norm,
                  linear, matmul, mean, mul, neg, permute, reshape, roll, sigmoid,
                  softmax, split, square, sub, sum, tanh)

__all__ = [
    "Node", "Tensor", "as_tensor", "backward", "check_finite", "clear_tape",
    "default_dtype", "get_default_dtype", "no_grad", "set_check_finite",
    "set_default_dtype", "tape_size", "corrupt_backward", "grad_check", "ops",
    "abs", "add", "concat", "div", "dropout", "gather", "gelu", "getitem",
    "layer_norm", "linear", "matmul", "mean", "mul", "neg", "permute", "reshape",
    "roll", "sigmoid", "softmax", "split", "square", "sub", "sum", "tanh",
]

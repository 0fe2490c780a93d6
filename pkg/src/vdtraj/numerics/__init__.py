"""Small reverse-mode differentiation engine and the layers the model needs."""

from .autograd import (
    Gradients, Tape, Tensor, add, as_tensor, backward, clip, concat, div, exp, gather_rows,
    getitem, log, logsumexp, matmul, mean, mul, neg, no_record, relu, reshape, sigmoid,
    square, stack, sub, tanh, transpose, tsum,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .layers import (
    dilated_conv2d, leaky_relu, linear, log_softmax, lstm_recurrent_step, lstm_sequence, lstm_step, softmax,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "Gradients", "Tape", "Tensor", "adam_step", "add", "as_tensor",
    "backward", "check_gradients", "clip", "concat", "dilated_conv2d", "div", "exp",
    "gather_rows", "getitem", "leaky_relu", "linear", "log", "log_softmax", "logsumexp",
    "lstm_recurrent_step", "lstm_sequence", "lstm_step", "matmul", "mean", "mul", "neg", "no_record", "numerical_grad",
    "relative_error", "relu", "reshape", "sigmoid", "softmax", "square", "stack", "sub",
    "tanh", "transpose", "tsum",
]

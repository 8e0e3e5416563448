from .tensor import (
    F32,
    Gradients,
    NotRetained,
    ShapeMismatch,
    Tape,
    Tensor,
    absolute,
    add,
    as_tensor,
    clip,
    concat,
    conv2d,
    conv2d_transpose,
    div,
    exp,
    gather_rows,
    l1_loss,
    linear,
    log,
    lstm_cell,
    matmul,
    mul,
    narrow,
    neg,
    relu,
    reshape,
    scale,
    scale_spatial,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    softplus,
    sub,
    take_along_last,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .params import (
    ParameterSet,
    glorot,
    init_conv,
    init_conv_transpose,
    init_linear,
    init_lstm,
)
from .optim import BadGradient, adam_step
from .checkpoint import CheckpointError, load_tensors, save_tensors

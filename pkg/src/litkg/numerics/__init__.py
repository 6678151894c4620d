from .optim import AdamState, TrainingError, adam_step
from .tensor import (
    LEAKY_SLOPE,
    ContractError,
    Segments,
    ShapeError,
    Tape,
    Tensor,
    activation,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    div,
    dropout,
    exp,
    gather_rows,
    leaky_relu,
    log,
    log_sigmoid,
    matmul,
    mul,
    neg,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
)

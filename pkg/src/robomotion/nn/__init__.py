from .autograd import (
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    constant,
    conv1d,
    conv1d_transpose,
    cross_entropy,
    div,
    embedding_lookup,
    getitem,
    log,
    masked_fill,
    matmul,
    mean_,
    mul,
    neg,
    parameter,
    record,
    relu,
    reshape,
    rmsnorm,
    scale,
    set_debug_checks,
    sigmoid,
    softmax,
    sub,
    sum_,
    transpose,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import AdamState, adam_step, zero_grads

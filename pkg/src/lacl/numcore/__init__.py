from .gradcheck import finite_diff_gradient, relative_error
from .kernels import EPS, cosine_similarity, l2_normalize, masked_mean, mean_pool, normalize_rows
from .tensor import (
    Tensor,
    add,
    clip,
    as_tensor,
    backward,
    concat,
    div,
    embedding,
    exp,
    gelu,
    index,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    power,
    reset,
    reshape,
    softmax,
    sqrt,
    stack,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
    zero_grad,
)

from .core import (
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    backward,
    check_finite,
    clip,
    concat,
    default_dtype,
    diagonal,
    div,
    exp,
    fine_grained_scores,
    gelu,
    get_default_dtype,
    getitem,
    interp_gather,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pad,
    power,
    relu,
    remainder,
    reshape,
    set_default_dtype,
    softmax,
    stack,
    sub,
    sum_,
    take,
    take_along,
    tanh,
    tensor,
    transpose,
)
from .gradcheck import gradcheck, numerical_grad

__all__ = [name for name in dir() if not name.startswith("_")]

"""Minimal reverse-mode differentiation substrate used by the learners."""
from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .params import (ParamStore, clip_grad_norm, collect_grads, forward_backward, rmsprop_update,
                     seeded_init)
from .tape import (ShapeError, Var, absolute, add, affine, backward, concat, elu, exp, gaussian_loglik,
                   gru_cell, gru_step, kl_std_normal, matmul, mean, mse, mul, relu, reshape, sigmoid, stack, sub,
                   take, take_along, tanh, total, value_of)

__all__ = [
    "CheckpointError", "ParamStore", "ShapeError", "Var", "absolute", "add", "affine", "backward",
    "clip_grad_norm", "collect_grads", "concat", "elu", "exp", "forward_backward", "gaussian_loglik",
    "gru_cell", "gru_step",
    "kl_std_normal", "load_checkpoint", "matmul", "mean", "mse", "mul", "read_manifest", "relu",
    "reshape", "rmsprop_update", "save_checkpoint", "seeded_init", "sigmoid", "stack", "sub", "take",
    "take_along", "tanh", "total", "value_of",
]

"""Minimal reverse-mode differentiation with the layer set a 1-D conv GAN needs."""

from wavrefine.autograd.checkpoint import load_checkpoint, save_checkpoint
from wavrefine.autograd.gradcheck import GradCheckReport, grad_check
from wavrefine.autograd.ops import (
    RefStats,
    absolute,
    batch_stats,
    concat,
    conv1d,
    dense,
    leaky_relu,
    mean,
    prelu,
    reshape,
    square,
    sum_all,
    tanh,
    tconv1d,
    virtual_batch_norm,
)
from wavrefine.autograd.optim import RmspropState, rmsprop_step
from wavrefine.autograd.tensor import NonFiniteError, Tensor, add, mul, no_grad


def truncated_normal(rng, shape, std: float = 0.02, dtype=None):
    """Normal(0, std) samples redrawn until they fall within two standard deviations."""
    import numpy as np

    dtype = np.dtype(dtype or np.float32)
    out = rng.standard_normal(shape, dtype=dtype)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()), dtype=dtype)
        bad = np.abs(out) > 2
    out *= dtype.type(std)
    return out


__all__ = [
    "GradCheckReport",
    "NonFiniteError",
    "RefStats",
    "RmspropState",
    "Tensor",
    "absolute",
    "add",
    "batch_stats",
    "concat",
    "conv1d",
    "dense",
    "grad_check",
    "leaky_relu",
    "load_checkpoint",
    "mean",
    "mul",
    "no_grad",
    "prelu",
    "reshape",
    "rmsprop_step",
    "save_checkpoint",
    "square",
    "sum_all",
    "tanh",
    "tconv1d",
    "truncated_normal",
    "virtual_batch_norm",
]

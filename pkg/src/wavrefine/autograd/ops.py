"""Differentiable layers for 1-D waveform networks.

Activations are laid out as (batch, length, channels); a 2-D
(length, channels) input is treated as a batch of one and returned 2-D.
Convolution kernels are (width, in_channels, out_channels). Padding is
symmetric ``(width - 1) / 2`` so a stride-``s`` layer maps length ``L`` to
``ceil(L / s)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wavrefine.autograd.tensor import Tensor, add, as_tensor, mul

VBN_EPS = 1e-5


def _pads(width: int) -> tuple[int, int]:
    left = (width - 1) // 2
    return left, width - 1 - left


def _batched(x: Tensor, op: str) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x, False
    if x.ndim == 2:
        return reshape(x, (1, *x.shape)), True
    raise ValueError(f"{op}: expected (batch, length, channels) input, got shape {x.shape}")


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def conv_forward(x: np.ndarray, k: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Strided 1-D cross-correlation; returns (output, im2col buffer)."""
    b, n, ci = x.shape
    w, _, co = k.shape
    left, right = _pads(w)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    n_out = (n - 1) // stride + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, w, axis=1)[:, ::stride][:, :n_out]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(b * n_out, w * ci)
    y = cols @ k.reshape(w * ci, co)
    return y.reshape(b, n_out, co), cols


def conv_backward_data(dy: np.ndarray, k: np.ndarray, stride: int, n: int) -> np.ndarray:
    """Adjoint of :func:`conv_forward` with respect to its input of length ``n``."""
    b, n_out, co = dy.shape
    w, ci, _ = k.shape
    left, _ = _pads(w)
    dcols = (dy.reshape(b * n_out, co) @ k.reshape(w * ci, co).T).reshape(b, n_out, w, ci)
    dxp = np.zeros((b, n + w - 1, ci), dtype=dy.dtype)
    span = stride * (n_out - 1) + 1
    for j in range(w):
        dxp[:, j : j + span : stride] += dcols[:, :, j]
    return dxp[:, left : left + n]


def conv_backward_kernel(cols: np.ndarray, dy: np.ndarray, width: int) -> np.ndarray:
    co = dy.shape[-1]
    return (cols.T @ dy.reshape(-1, co)).reshape(width, -1, co)


def conv1d(x, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Strided 'same' convolution: (B, L, Ci) -> (B, ceil(L/stride), Co)."""
    x, squeeze = _batched(as_tensor(x), "conv1d")
    if kernel.ndim != 3 or kernel.shape[1] != x.shape[2]:
        raise ValueError(f"conv1d: kernel {kernel.shape} does not match input channels {x.shape[2]}")
    if bias is not None and bias.shape != (kernel.shape[2],):
        raise ValueError(f"conv1d: bias {bias.shape} does not match {kernel.shape[2]} output channels")
    n = x.shape[1]
    y, cols = conv_forward(x.data, kernel.data, stride)
    if bias is not None:
        y = y + bias.data

    def backward(g):
        dx = conv_backward_data(g, kernel.data, stride, n) if x.requires_grad else None
        dk = conv_backward_kernel(cols, g, kernel.shape[0]) if kernel.requires_grad else None
        db = g.sum(axis=(0, 1)) if bias is not None and bias.requires_grad else None
        return (dx, dk, db) if bias is not None else (dx, dk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _unbatch(Tensor.from_op(y, parents, backward, "conv1d"), squeeze)


def tconv1d(x, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Fractional-strided convolution: (B, L, Ci) -> (B, L*stride, Co).

    ``kernel`` is (width, Co, Ci), the layout of the convolution this layer
    is the transpose of, so ``tconv1d(y, k)`` is the adjoint of
    ``conv1d(., k)`` for the same ``k``.
    """
    x, squeeze = _batched(as_tensor(x), "tconv1d")
    if kernel.ndim != 3 or kernel.shape[2] != x.shape[2]:
        raise ValueError(f"tconv1d: kernel {kernel.shape} does not match input channels {x.shape[2]}")
    if bias is not None and bias.shape != (kernel.shape[1],):
        raise ValueError(f"tconv1d: bias {bias.shape} does not match {kernel.shape[1]} output channels")
    n_out = x.shape[1] * stride
    y = conv_backward_data(x.data, kernel.data, stride, n_out)
    if bias is not None:
        y = y + bias.data

    def backward(g):
        dx = dk = None
        if x.requires_grad or kernel.requires_grad:
            dx, gcols = conv_forward(g, kernel.data, stride)
            if kernel.requires_grad:
                dk = conv_backward_kernel(gcols, x.data, kernel.shape[0])
        db = g.sum(axis=(0, 1)) if bias is not None and bias.requires_grad else None
        return (dx, dk, db) if bias is not None else (dx, dk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _unbatch(Tensor.from_op(y, parents, backward, "tconv1d"), squeeze)


def leaky_relu(x, alpha: float = 0.3) -> Tensor:
    x = as_tensor(x)
    slope = np.where(x.data >= 0, 1.0, alpha).astype(x.dtype)
    return Tensor.from_op(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def prelu(x, slopes: Tensor) -> Tensor:
    """Leaky ReLU with one learnable negative slope per channel (last axis)."""
    x = as_tensor(x)
    if slopes.shape != (x.shape[-1],):
        raise ValueError(f"prelu: slopes {slopes.shape} do not match {x.shape[-1]} channels")
    neg = x.data < 0
    y = np.where(neg, x.data * slopes.data, x.data)

    def backward(g):
        dx = np.where(neg, g * slopes.data, g)
        ds = np.where(neg, g * x.data, 0).reshape(-1, x.shape[-1]).sum(axis=0)
        return dx, ds

    return Tensor.from_op(y, (x, slopes), backward, "prelu")


@dataclass(frozen=True)
class RefStats:
    """Per-channel first and second moments of a reference batch."""

    mean: np.ndarray
    meansq: np.ndarray
    batch_size: int

    @classmethod
    def from_mean_var(cls, mean, var, batch_size: int) -> "RefStats":
        mean = np.asarray(mean)
        return cls(mean, np.asarray(var) + mean**2, batch_size)

    @property
    def var(self) -> np.ndarray:
        return self.meansq - self.mean**2


def batch_stats(x: np.ndarray) -> RefStats:
    """Moments over batch and length of a (B, L, C) activation."""
    return RefStats(x.mean(axis=(0, 1)), (x**2).mean(axis=(0, 1)), x.shape[0])


def virtual_batch_norm(x, ref: RefStats, gain: Tensor, bias: Tensor, eps: float = VBN_EPS, include_current: bool = True) -> Tensor:
    """Normalize each example against a fixed reference batch.

    The statistics used are ``w * example + (1 - w) * reference`` with
    ``w = 1 / (ref.batch_size + 1)`` (``w = 0`` if ``include_current`` is
    false). Reference moments are constants; gradients flow through the
    example's own moments.
    """
    x, squeeze = _batched(as_tensor(x), "virtual_batch_norm")
    c = x.shape[2]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"virtual_batch_norm: gain/bias must have shape ({c},)")
    n = x.shape[1]
    w = 1.0 / (ref.batch_size + 1) if include_current else 0.0
    xd = x.data
    mu = w * xd.mean(axis=1, keepdims=True) + (1 - w) * ref.mean
    msq = w * (xd**2).mean(axis=1, keepdims=True) + (1 - w) * ref.meansq
    var = np.maximum(msq - mu**2, 0.0)
    inv = 1.0 / np.sqrt(var + eps)
    centered = xd - mu
    xhat = centered * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = None
        if x.requires_grad:
            a = dxhat.sum(axis=1, keepdims=True)
            b = (dxhat * centered).sum(axis=1, keepdims=True)
            dx = dxhat * inv - a * inv * (w / n) - b * inv**3 * (w / n) * centered
        dgain = (g * xhat).sum(axis=(0, 1))
        dbias = g.sum(axis=(0, 1))
        return dx, dgain, dbias

    out = Tensor.from_op(y.astype(xd.dtype), (x, gain, bias), backward, "virtual_batch_norm")
    return _unbatch(out, squeeze)


def dense(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map (B, N) @ (N, M) + (M,)."""
    x = as_tensor(x)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense: cannot apply weight {weight.shape} to input {x.shape}")
    y = x.data @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
        y = y + bias.data

    def backward(g):
        grads = (g @ weight.data.T, x.data.T @ g)
        return grads + (g.sum(axis=0),) if bias is not None else grads

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(y, parents, backward, "dense")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(y, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1 - y**2),), "tanh")


def square(x) -> Tensor:
    x = as_tensor(x)
    return Tensor.from_op(x.data**2, (x,), lambda g: (2 * g * x.data,), "square")


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return Tensor.from_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return Tensor.from_op(x.data.mean(), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean")


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return Tensor.from_op(x.data.sum(), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),), "sum")


__all__ = [
    "RefStats",
    "absolute",
    "add",
    "batch_stats",
    "concat",
    "conv1d",
    "dense",
    "leaky_relu",
    "mean",
    "mul",
    "prelu",
    "reshape",
    "square",
    "sum_all",
    "tanh",
    "tconv1d",
    "virtual_batch_norm",
]

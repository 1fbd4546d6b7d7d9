"""
Primitive differentiable operations
Each op computes its forward result with numpy and registers a backward rule via make_result
"""
from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from nn.tensor import Tensor, as_tensor, make_result
from utils.errors import DimensionError

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, f"shapes {a.shape} and {b.shape} are not broadcast-compatible")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result('add', a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast('sub', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result('sub', a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast('mul', a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result('mul', a.data * b.data, (a, b), backward)


def power(x: Tensor, exponent: float) -> Tensor:
    def backward(g):
        return (g * exponent * np.power(x.data, exponent - 1),)

    return make_result('power', np.power(x.data, exponent), (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_result('exp', out, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return make_result('sum', np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_result('mean', np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError('reshape', f"cannot reshape {x.shape} into {tuple(shape)}")

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result('reshape', out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_result('transpose', np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def narrow(x: Tensor, start: int, length: int) -> Tensor:
    """Slice ``length`` channels starting at ``start`` along the last axis."""
    if start < 0 or start + length > x.shape[-1]:
        raise DimensionError('narrow', f"range [{start}, {start + length}) exceeds last axis {x.shape[-1]}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:start + length] = g
        return (full,)

    return make_result('narrow', np.ascontiguousarray(x.data[..., start:start + length]), (x,), backward)


def split(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    """Split along the last axis into consecutive pieces of the given sizes."""
    if sum(sizes) != x.shape[-1]:
        raise DimensionError('split', f"sizes {list(sizes)} do not sum to last axis {x.shape[-1]}")
    pieces, start = [], 0
    for size in sizes:
        pieces.append(narrow(x, start, size))
        start += size
    return pieces


def flatten_transpose(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,H*W,C]; tokens are row-major over (H, W)."""
    if x.ndim != 4:
        raise DimensionError('flatten_transpose', f"expected rank-4 input [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    out = np.ascontiguousarray(x.data.reshape(b, c, h * w).transpose(0, 2, 1))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b, c, h, w),)

    return make_result('flatten_transpose', out, (x,), backward)


def unflatten_transpose(x: Tensor, height: int, width: int) -> Tensor:
    """Inverse of flatten_transpose: [B,H*W,C] -> [B,C,H,W]."""
    if x.ndim != 3 or x.shape[1] != height * width:
        raise DimensionError('unflatten_transpose', f"cannot restore {x.shape} to {height}x{width}")
    b, n, c = x.shape
    out = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(b, c, height, width)

    def backward(g):
        return (np.ascontiguousarray(g.reshape(b, c, n).transpose(0, 2, 1)),)

    return make_result('unflatten_transpose', out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the token axis: [B,N,C] -> [B,C]."""
    if x.ndim != 3 or x.shape[1] < 1:
        raise DimensionError('global_avg_pool', f"expected [B,N,C] with N >= 1, got {x.shape}")
    n = x.shape[1]

    def backward(g):
        return (np.repeat(g[:, None, :] / n, n, axis=1),)

    return make_result('global_avg_pool', x.data.mean(axis=1), (x,), backward)


# ---------------------------------------------------------------- activations

def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result('gelu', x.data * cdf, (x,), backward)


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)

    def backward(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return make_result('silu', x.data * s, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    def backward(g):
        return (g * expit(x.data),)

    return make_result('softplus', np.logaddexp(0.0, x.data).astype(x.dtype), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError('softmax', f"axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result('softmax', out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError('log_softmax', f"axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result('log_softmax', out, (x,), backward)


# ---------------------------------------------------------------- layers

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the trailing axis: [..., Din] -> [..., Dout]."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            'linear', f"input trailing axis {x.shape[-1]} does not match weight in-features (axis 1) {weight.shape}"
        )
    d_out, d_in = weight.shape
    if bias is not None and bias.shape != (d_out,):
        raise DimensionError('linear', f"bias shape {bias.shape} does not match out-features {d_out}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = g @ weight.data
        gw = g2.T @ x.data.reshape(-1, d_in)
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result('linear', out, inputs, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, [B,Cin,H,W] * [Cout,Cin,kh,kw] -> [B,Cout,H',W']."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError('conv2d', f"expected rank-4 input and weight, got {x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError('conv2d', f"stride must be positive and padding non-negative, got {stride}, {padding}")
    b, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_w != c_in:
        raise DimensionError('conv2d', f"input channels (axis 1) = {c_in} but weight in-channels (axis 1) = {c_w}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            'conv2d', f"kernel (axes 2,3) {kh}x{kw} larger than padded input (axes 2,3) "
                      f"{h + 2 * padding}x{w + 2 * padding}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError('conv2d', f"bias shape {bias.shape} does not match out-channels {c_out}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.einsum('bohw,oc->bchw', g, weight.data[:, :, i, j])
                gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += contrib
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result('conv2d', out, inputs, backward)


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    """
    Causal depthwise convolution over the last axis, [B,D,L] -> [B,D,L].
    The input is left-padded with k-1 zeros so position t only sees inputs <= t.
    """
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise DimensionError(
            'depthwise_conv1d', f"channels (axis 1) of input {x.shape} must match weight rows {weight.shape}"
        )
    _, d, length = x.shape
    k = weight.shape[1]
    if k < 1:
        raise DimensionError('depthwise_conv1d', "kernel size must be >= 1")

    xp = np.pad(x.data, ((0, 0), (0, 0), (k - 1, 0)))
    windows = sliding_window_view(xp, k, axis=2)
    out = np.einsum('bdlk,dk->bdl', windows, weight.data)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        gw = np.einsum('bdl,bdlk->dk', g, windows)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + length] += g * weight.data[None, :, j, None]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return np.ascontiguousarray(gxp[:, :, k - 1:]), gw, gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result('depthwise_conv1d', out, inputs, backward)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Per-channel normalization over (B, H, W).
    Training mode uses batch statistics and updates the running buffers in place.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError('batch_norm2d', f"channels (axis 1) of {x.shape} must match gamma/beta {gamma.shape}")
    if eps <= 0:
        raise DimensionError('batch_norm2d', "eps must be positive")
    axes = (0, 2, 3)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if n < 1:
        raise DimensionError('batch_norm2d', "B*H*W must be >= 1")

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * n / max(n - 1, 1)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mean = running_mean.copy()
        var = running_var.copy()

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]

    def backward(g):
        g_hat = g * gamma.data[None, :, None, None]
        g_gamma = (g * x_hat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        if training:
            gx = (inv_std[None, :, None, None] / n) * (
                n * g_hat
                - g_hat.sum(axis=axes, keepdims=True)
                - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = g_hat * inv_std[None, :, None, None]
        return gx, g_gamma, g_beta

    return make_result('batch_norm2d', out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each position over the last axis only."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError('layer_norm', f"last axis {c} does not match gamma/beta {gamma.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = gamma.data * x_hat + beta.data

    def backward(g):
        g_hat = g * gamma.data
        lead = tuple(range(g.ndim - 1))
        g_gamma = (g * x_hat).sum(axis=lead)
        g_beta = g.sum(axis=lead)
        gx = (inv_std / c) * (
            c * g_hat
            - g_hat.sum(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).sum(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    return make_result('layer_norm', out.astype(x.dtype, copy=False), (x, gamma, beta), backward)

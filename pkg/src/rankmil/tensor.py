"""Dense numeric kernels: affine maps, valid convolution, 2x2 max pooling
and pointwise activations.

Tensors are plain float64 numpy arrays in C (row-major) order.  The
convolution and pooling routines accept either a single ``(C, H, W)``
input or a batch ``(N, C, H, W)``; outputs keep the same rank.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

ACTIVATIONS = ("tanh", "relu", "linear")


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def matvec(W, x, b):
    """Return ``W @ x + b`` for a 2-D ``W`` and 1-D ``x``, ``b``."""
    W, x, b = as_tensor(W), as_tensor(x), as_tensor(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1 or W.shape != (b.shape[0], x.shape[0]):
        raise DimensionError(
            f"matvec shapes do not conform: W{W.shape}, x{x.shape}, b{b.shape}"
        )
    return W @ x + b


def _batched(x, what):
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"{what} expects (C,H,W) or (N,C,H,W) input, got {x.shape}")


def conv2d_valid(x, kernels, bias):
    """Stride-1, unpadded cross-correlation (no kernel flip) plus bias.

    ``kernels`` has shape ``(K, C, kh, kw)``; the output has shape
    ``(K, H-kh+1, W-kw+1)`` (with a leading batch axis if one was given).
    """
    xb, single = _batched(x, "conv2d_valid")
    kernels, bias = as_tensor(kernels), as_tensor(bias)
    if kernels.ndim != 4 or bias.shape != (kernels.shape[0],):
        raise DimensionError(
            f"conv2d_valid kernel/bias shapes invalid: {kernels.shape}, {bias.shape}"
        )
    _, c, h, w = xb.shape
    k, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(f"conv2d_valid channel mismatch: input {xb.shape[1:]}, kernels {kernels.shape}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d_valid kernel {kernels.shape[2:]} larger than input {xb.shape[2:]}")
    windows = sliding_window_view(xb, (kh, kw), axis=(2, 3))  # N,C,OH,OW,kh,kw
    out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3]))  # N,OH,OW,K
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]
    return out[0] if single else out


def conv2d_valid_backward(x, kernels, dout, input_grad=True):
    """Gradients of :func:`conv2d_valid` w.r.t. input, kernels and bias.

    With ``input_grad=False`` the input gradient is skipped and returned as
    ``None`` (first layer of a network).
    """
    xb, single = _batched(x, "conv2d_valid_backward")
    kernels = as_tensor(kernels)
    dout = as_tensor(dout)
    if single:
        dout = dout[None]
    kh, kw = kernels.shape[2:]
    windows = sliding_window_view(xb, (kh, kw), axis=(2, 3))
    dkernels = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))  # K,C,kh,kw
    dbias = dout.sum(axis=(0, 2, 3))
    if not input_grad:
        return None, dkernels, dbias
    padded = np.pad(dout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    pwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # N,K,H,W,kh,kw
    flipped = kernels[:, :, ::-1, ::-1]
    dx = np.tensordot(pwin, flipped, axes=([1, 4, 5], [0, 2, 3]))  # N,H,W,C
    dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
    return (dx[0] if single else dx), dkernels, dbias


def maxpool2d(x):
    """2x2 max pooling with stride 2.

    Returns ``(out, argmax)`` where ``argmax`` holds, per output cell, the
    flat row-major index of the winning element within one sample's
    ``(C, H, W)`` input.  Ties go to the first element in window order;
    trailing odd rows/columns are dropped.
    """
    xb, single = _batched(x, "maxpool2d")
    n, c, h, w = xb.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2d input {xb.shape[2:]} smaller than the 2x2 window")
    oh, ow = h // 2, w // 2
    cropped = xb[:, :, : 2 * oh, : 2 * ow]
    win = cropped.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    local = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(oh)[:, None] + local // 2
    cols = 2 * np.arange(ow)[None, :] + local % 2
    argmax = (np.arange(c)[:, None, None] * h + rows) * w + cols
    out = np.ascontiguousarray(out)
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool2d_backward(dout, argmax, input_shape):
    """Route ``dout`` back to the recorded argmax positions."""
    dout = as_tensor(dout)
    single = dout.ndim == 3
    if single:
        dout, argmax = dout[None], argmax[None]
    n = dout.shape[0]
    per_sample = int(np.prod(input_shape[-3:]))
    dx = np.zeros((n, per_sample))
    # windows never overlap, so each input cell receives at most one value
    np.put_along_axis(dx, argmax.reshape(n, -1), dout.reshape(n, -1), axis=1)
    dx = dx.reshape((n,) + tuple(input_shape[-3:]))
    return dx[0] if single else dx


def activate(x, kind):
    x = as_tensor(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "linear":
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_derivative(x, kind):
    """Derivative evaluated at the pre-activation ``x`` (relu'(0) = 0)."""
    x = as_tensor(x)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "linear":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")

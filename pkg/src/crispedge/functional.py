"""Network operators on NCHW tensors, each with its exact reverse-mode rule."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as _t
from .tensor import Tensor, as_tensor, make_result, reshape

__all__ = [
    "conv2d",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "upsample_bilinear",
    "global_avg_pool",
    "flatten",
    "fully_connected",
    "add",
    "concat_channels",
    "conv_output_size",
]


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo))
    rs, cs = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + rs:stride, c0:c0 + cs:stride]
    return cols


def _col2im(dcols: np.ndarray, padded_shape, stride: int, dilation: int) -> np.ndarray:
    _, _, kh, kw, ho, wo = dcols.shape
    dxp = np.zeros(padded_shape)
    rs, cs = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            dxp[:, :, r0:r0 + rs:stride, c0:c0 + cs:stride] += dcols[:, :, i, j]
    return dxp


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """Zero-padded 2-D cross-correlation (no kernel flip).

    ``w`` is either a shared kernel ``(Cout, Cin/groups, kh, kw)`` or a
    per-sample kernel stack ``(N, Cout, Cin/groups, kh, kw)``; the latter is
    what conditionally parameterized convolution feeds in.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 4-D (N,C,H,W), got shape {x.shape}")
    per_sample = w.ndim == 5
    if w.ndim not in (4, 5):
        raise ValueError(f"conv2d weight must be 4-D or 5-D, got shape {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape[-4:]
    if stride < 1 or dilation < 1 or padding < 0 or groups < 1:
        raise ValueError("stride and dilation must be >= 1, padding >= 0, groups >= 1")
    if cin % groups:
        raise ValueError(f"input channels {cin} not divisible by groups={groups}")
    if cout % groups:
        raise ValueError(f"output channels {cout} not divisible by groups={groups}")
    if cin_g * groups != cin:
        raise ValueError(f"weight in-channels {cin_g} x groups {groups} != input channels {cin}")
    if per_sample and w.shape[0] != n:
        raise ValueError(f"per-sample weight batch {w.shape[0]} != input batch {n}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(wd, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} (dilation {dilation}) larger than padded input {h}x{wd}")

    g = groups
    cout_g = cout // g
    kg = cin_g * kh * kw
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        xp = x.data
        cols = x.data.reshape(n, g, kg, ho * wo)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _im2col(xp, kh, kw, stride, dilation, ho, wo).reshape(n, g, kg, ho * wo)
    wmat = w.data.reshape((n, g, cout_g, kg) if per_sample else (g, cout_g, kg))
    out = np.matmul(wmat, cols).reshape(n, cout, ho, wo)
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)
    padded_shape = xp.shape

    def _back(gout):
        gr = gout.reshape(n, g, cout_g, ho * wo)
        gw = None
        if w.requires_grad:
            gw = np.matmul(gr, cols.transpose(0, 1, 3, 2))
            if not per_sample:
                gw = gw.sum(axis=0)
            gw = gw.reshape(w.shape)
        gx = None
        if x.requires_grad:
            wt = wmat.transpose(0, 1, 3, 2) if per_sample else wmat.transpose(0, 2, 1)
            gcols = np.matmul(wt, gr)
            if pointwise:
                gx = gcols.reshape(x.shape)
            else:
                gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
                gxp = _col2im(gcols, padded_shape, stride, dilation)
                gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        gb = gout.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, _back)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool = True,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    Training mode normalizes with batch statistics over N, H, W and, when
    running buffers are given, updates them in place (unbiased variance, as
    the usual framework convention). Eval mode uses the running buffers.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match C={c}")
    shape = (1, c, 1, 1)
    if training:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            unbiased = var * m / max(m - 1, 1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batchnorm needs running statistics")
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def _back(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = (gxhat - mean_g - xhat * mean_gx) * inv_std.reshape(shape)
            else:
                gx = gxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), _back)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of two same-shaped tensors."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"add needs identical shapes, got {x.shape} and {y.shape}")
    return _t.add(x, y)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _back(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), _back)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def _back(g):
        return (g * out * (1.0 - out),)

    return make_result(out, (x,), _back)


def bilinear_matrix(size: int, scale: int) -> np.ndarray:
    """Interpolation matrix (size*scale, size), half-pixel centers, edge clamped."""
    out = size * scale
    src = (np.arange(out) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    mat = np.zeros((out, size))
    rows = np.arange(out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def upsample_bilinear(x: Tensor, scale: int) -> Tensor:
    """Bilinear upsampling by an integer factor (align-corners off)."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return x
    n, c, h, w = x.shape
    ah = bilinear_matrix(h, scale)
    aw = bilinear_matrix(w, scale)
    out = np.einsum("ih,nchw,jw->ncij", ah, x.data, aw, optimize=True)

    def _back(g):
        return (np.einsum("ih,ncij,jw->nchw", ah, g, aw, optimize=True),)

    return make_result(out, (x,), _back)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def _back(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return make_result(out, (x,), _back)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def fully_connected(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` with ``x`` (N, F_in) and ``w`` (F_out, F_in)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError(f"fully_connected expects 2-D x and w, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"feature size mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    out = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.data

    def _back(g):
        gx = g @ w.data
        gw = g.T @ x.data
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, _back)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"cannot concatenate shapes {ref} and {t.shape} along channels")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return make_result(out, tuple(tensors), _back)

"""Differentiable layer primitives for the occlusion head.

Everything is float64 numpy with hand-written reverse-mode gradients.
Feature maps are channel-first (C, H, W). Convolutions are 3x3 with "same"
padding; transposed convolutions cover the two upsampling cases used by the
head (3x3 stride-2 pad-1 for the coarse map, 2x2 stride-2 for the mask
logits). The maps are tiny, so the implementations avoid generic numpy
helpers in favor of preallocated buffers and single GEMMs per layer.
"""
from __future__ import annotations

import numpy as np


_GATHER_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _gather_index(h: int, w: int) -> np.ndarray:
    """Flat indices into a 1-pixel-padded map realizing the 3x3 patch scan."""
    key = (h, w)
    idx = _GATHER_CACHE.get(key)
    if idx is None:
        pw = w + 2
        corners = (np.arange(h)[:, None] * pw + np.arange(w)[None, :]).ravel()
        taps = (np.arange(3)[:, None] * pw + np.arange(3)[None, :]).ravel()
        idx = (taps[:, None] + corners[None, :]).ravel()
        _GATHER_CACHE[key] = idx
    return idx


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(C_in*9, H*W) patch matrix of a same-padded 3x3 neighborhood scan."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    return xp.reshape(c, -1)[:, _gather_index(h, w)].reshape(c * 9, h * w)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded 3x3 convolution.

    x: (C_in, H, W); w: (C_out, C_in, 3, 3); b: (C_out,).
    Returns (y, cols) where cols is the (C_in*9, H*W) patch matrix kept for
    the backward pass.
    """
    _, h, wd = x.shape
    cols = _im2col3(x)
    y = (w.reshape(w.shape[0], -1) @ cols).reshape(w.shape[0], h, wd)
    y += b[:, None, None]
    return y, cols


def conv3x3_backward(
    gy: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape: tuple[int, int, int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c_in, h, wd = x_shape
    c_out = w.shape[0]
    gy2 = gy.reshape(c_out, h * wd)
    gw = (gy2 @ cols.T).reshape(w.shape)
    gb = gy2.sum(axis=1)
    # input gradient: full correlation of gy with the flipped kernel
    gcols = _im2col3(gy)
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(
        c_in, c_out * 9
    )
    gx = (wflip @ gcols).reshape(c_in, h, wd)
    return gx, gw, gb


def conv_transpose(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    stride: int,
    pad: int = 0,
    out_pad: int = 0,
) -> np.ndarray:
    """Transposed convolution. x: (C_in, H, W); w: (C_in, C_out, k, k)."""
    c_in, h, wd = x.shape
    k = w.shape[2]
    c_out = w.shape[1]
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    out_h = (h - 1) * stride - 2 * pad + k + out_pad
    out_w = (wd - 1) * stride - 2 * pad + k + out_pad
    if pad + out_h > full_h or pad + out_w > full_w:
        raise ValueError("unsupported transposed-conv geometry (output exceeds scatter span)")
    # one GEMM for all kernel taps, then scatter the k*k slabs
    taps = (w.reshape(c_in, c_out * k * k).T @ x.reshape(c_in, h * wd)).reshape(
        c_out, k, k, h, wd
    )
    if k == stride and pad == 0 and out_pad == 0:
        # non-overlapping taps: pure interleave, no accumulation buffer
        y = np.empty((c_out, out_h, out_w))
        for ky in range(k):
            for kx in range(k):
                y[:, ky::stride, kx::stride] = taps[:, ky, kx]
        return y + b[:, None, None]
    full = np.zeros((c_out, full_h, full_w))
    for ky in range(k):
        for kx in range(k):
            full[:, ky : ky + h * stride : stride, kx : kx + wd * stride : stride] += taps[:, ky, kx]
    y = full[:, pad : pad + out_h, pad : pad + out_w]
    return y + b[:, None, None]


def conv_transpose_backward(
    gy: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    stride: int,
    pad: int = 0,
    out_pad: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c_in, h, wd = x.shape
    k = w.shape[2]
    c_out = w.shape[1]
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    gfull = np.zeros((c_out, full_h, full_w))
    gfull[:, pad : pad + gy.shape[1], pad : pad + gy.shape[2]] = gy
    subs = np.empty((c_out, k, k, h, wd))
    for ky in range(k):
        for kx in range(k):
            subs[:, ky, kx] = gfull[
                :, ky : ky + h * stride : stride, kx : kx + wd * stride : stride
            ]
    subs2 = subs.reshape(c_out * k * k, h * wd)
    gw = (x.reshape(c_in, h * wd) @ subs2.T).reshape(c_in, c_out, k, k)
    gx = (w.reshape(c_in, c_out * k * k) @ subs2).reshape(c_in, h, wd)
    gb = gy.sum(axis=(1, 2))
    return gx, gw, gb


def fc(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x: (n_in,); w: (n_out, n_in); b: (n_out,)."""
    return w @ x + b


def fc_backward(gy: np.ndarray, x: np.ndarray, w: np.ndarray):
    return w.T @ gy, np.outer(gy, x), gy.copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(gy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Uses the forward output; the subgradient at exactly zero is zero."""
    return gy * (y > 0.0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(gy: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    _, h, w = shape
    return np.broadcast_to(gy[:, None, None] / (h * w), shape).copy()


def sigmoid(z):
    arr = np.asarray(z, dtype=np.float64)
    flat = arr.ravel()
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ez = np.exp(flat[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out.reshape(arr.shape)


def bce_with_logits(z: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy, numerically stable for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


def bce_with_logits_grad(z: np.ndarray, target: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return (sigmoid(z) - t) / z.size

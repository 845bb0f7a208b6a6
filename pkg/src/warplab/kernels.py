"""Differentiable numpy kernels for the small CNN stack.

Hand-written forward/backward pairs; no autodiff tape. Convolution is
reduced to a single im2col matmul so BLAS carries the arithmetic, and the
backward pass scatters gradients with k*k strided adds in a fixed order,
so results are bit-stable for fixed inputs on one build. Tensors are
float32 by convention, but every kernel preserves the input dtype, which
lets the gradient tests run the identical code path in float64.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N*OH*OW, C*kh*kw) patch matrix (one copy)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N,C,OH,OW,kh,kw)
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
           stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation of NCHW input with (F,C,kh,kw) filters."""
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d wants 4-d x and w, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ContractError(f"channel mismatch: x has {c}, filters expect {cw}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ContractError(f"kernel {kh}x{kw} does not fit {h}x{wd} input with pad {pad}")
    cols = _im2col(_pad2d(x, pad), kh, kw, stride)
    y = cols @ w.reshape(f, -1).T
    if b is not None:
        y = y + b
    return y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)


def conv2d_bwd(x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int = 1,
               pad: int = 0, need_dx: bool = True):
    """Gradients of conv2d: returns (dx, dw, db); dx is None if not needed.

    dx is exact (analytic), required both for backprop to earlier layers
    and for steering gradients through the input image.
    """
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape
    gmat = gy.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
    cols = _im2col(_pad2d(x, pad), kh, kw, stride)
    dw = (cols.T @ gmat).T.reshape(f, c, kh, kw)
    db = gy.sum(axis=(0, 2, 3), dtype=np.float64).astype(gy.dtype)
    dx = None
    if need_dx:
        gcols = gmat @ w.reshape(f, -1)  # (N*OH*OW, C*kh*kw)
        g6 = gcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += g6[:, :, i, j]
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kink
    return gy * (x > 0)


def maxpool2(x: np.ndarray):
    """2x2/stride-2 max pool; returns (y, argmax cache). Ties go to the
    first slot in (top-left, top-right, bottom-left, bottom-right) order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"maxpool2 wants even spatial dims, got {h}x{w}")
    xr = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(n, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_bwd(idx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    n, c, oh, ow = gy.shape
    flat = np.zeros((n, c, oh, ow, 4), dtype=gy.dtype)
    np.put_along_axis(flat, idx[..., None], gy[..., None], axis=-1)
    return flat.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)


def global_avg_pool_bwd(gy: np.ndarray, h: int, w: int) -> np.ndarray:
    scale = np.asarray(1.0 / (h * w), dtype=gy.dtype)
    return np.broadcast_to((gy * scale)[:, :, None, None], gy.shape + (h, w)).copy()


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def linear_bwd(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    dx = gy @ w.T
    dw = x.T @ gy
    db = gy.sum(axis=0, dtype=np.float64).astype(gy.dtype)
    return dx, dw, db


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy against integer labels; returns (loss, dlogits)."""
    n, k = logits.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label out of range for {k} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, dtype=np.float64))
    loss = float(np.mean(lse - z[np.arange(n), labels].astype(np.float64)))
    p = softmax(logits)
    p[np.arange(n), labels] -= 1
    dlogits = (p / n).astype(logits.dtype)
    return loss, dlogits


def sgd_step(theta: np.ndarray, grad: np.ndarray, vel: np.ndarray,
             lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """In-place SGD with momentum: v <- mu*v + g + wd*theta; theta <- theta - lr*v."""
    g = grad
    if weight_decay:
        g = g + np.asarray(weight_decay, dtype=theta.dtype) * theta
    vel *= np.asarray(momentum, dtype=vel.dtype)
    vel += g
    theta -= np.asarray(lr, dtype=theta.dtype) * vel

"""Numpy layer primitives with explicit backward passes.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)`` and returns the input gradient followed by any
parameter gradients. Images are NHWC.
"""

from __future__ import annotations

import numpy as np

EPS_NORM = 1e-12


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


# --- affine -----------------------------------------------------------------

def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# --- convolution ------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, stride: int = 2, pad: int = 1):
    """x: (B, H, W, Cin); w: (k, k, Cin, Cout). No bias (a norm layer follows)."""
    B, H, W, C = x.shape
    k = w.shape[0]
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((B, Ho, Wo, k, k, C), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
    cols = cols.reshape(B * Ho * Wo, k * k * C)
    out = cols @ w.reshape(k * k * C, -1)
    return out.reshape(B, Ho, Wo, -1), (cols, x.shape, w, stride, pad)


def conv2d_backward(dout, cache):
    cols, xshape, w, stride, pad = cache
    B, H, W, C = xshape
    k = w.shape[0]
    _, Ho, Wo, Cout = dout.shape
    d2 = dout.reshape(-1, Cout)
    dw = (cols.T @ d2).reshape(w.shape)
    dcols = (d2 @ w.reshape(-1, Cout).T).reshape(B, Ho, Wo, k, k, C)
    dxp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
    return dxp[:, pad:pad + H, pad:pad + W, :], dw


# --- normalization ----------------------------------------------------------

def group_norm_forward(x, gamma, beta, groups: int, eps: float = 1e-5):
    """Per-sample normalization over (H, W, C/groups); batch-independent."""
    B, H, W, C = x.shape
    xg = x.reshape(B, H, W, groups, C // groups)
    mu = xg.mean(axis=(1, 2, 4), keepdims=True)
    var = xg.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, H, W, C)
    return xhat * gamma + beta, (xhat, inv, gamma, groups)


def group_norm_backward(dout, cache):
    xhat, inv, gamma, groups = cache
    B, H, W, C = xhat.shape
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = (dout * gamma).reshape(B, H, W, groups, C // groups)
    xh = xhat.reshape(B, H, W, groups, C // groups)
    n = H * W * (C // groups)
    axes = (1, 2, 4)
    dx = inv / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                    - xh * (dxhat * xh).sum(axis=axes, keepdims=True))
    return dx.reshape(B, H, W, C), dgamma, dbeta


def batch_norm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                       momentum: float = 0.1, eps: float = 1e-5):
    """Returns (out, cache, new_running_mean, new_running_var)."""
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        new_mean = (1.0 - momentum) * running_mean + momentum * mu
        new_var = (1.0 - momentum) * running_var + momentum * var
    else:
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv, gamma, train), new_mean, new_var


def batch_norm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    n = xhat.shape[0]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


# --- pointwise --------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def sigmoid_forward(x):
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def global_avg_pool_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout, shape):
    B, H, W, C = shape
    return np.broadcast_to(dout[:, None, None, :] / (H * W), shape).copy()


def l2_normalize(x):
    """Row-wise unit vectors; all-zero rows stay zero."""
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, EPS_NORM)


def l2_normalize_backward(dunit, x):
    norm = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), EPS_NORM)
    u = x / norm
    return (dunit - u * (dunit * u).sum(axis=-1, keepdims=True)) / norm

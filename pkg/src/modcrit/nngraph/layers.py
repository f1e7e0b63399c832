"""Forward and backward kernels for each node kind.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
maps ``(dout, cache)`` to input/parameter gradients. Convolutions use zero
padding and cross-correlation, the usual deep-learning convention.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def dense_forward(x, w, b):
    return x @ w.T + b, x


def dense_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def _windows(x, q, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (q, q), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win  # (n, c, h_out, w_out, q, q)


def conv2d_forward(x, w, b, stride=1, pad=0):
    q = w.shape[2]
    win = _windows(x, q, stride, pad)
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * q * q)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    out = out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)
    return out, (x.shape, cols, stride, pad, ho, wo)


def conv2d_backward(dout, cache, w):
    x_shape, cols, stride, pad, ho, wo = cache
    n, c, h, wid = x_shape
    c_out, _, q, _ = w.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(c_out, -1)).reshape(n, ho, wo, c, q, q)
    dxp = np.zeros((n, c, h + 2 * pad, wid + 2 * pad))
    for i in range(q):
        for j in range(q):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, k=2):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, k)


def maxpool_backward(dout, cache):
    shape, idx, k = cache
    n, c, h, w = shape
    dblocks = np.zeros((n, c, h // k, w // k, k * k))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    return dblocks.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    logp = z - logsumexp[:, None]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n

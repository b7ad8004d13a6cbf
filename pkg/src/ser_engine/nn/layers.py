"""Forward and backward kernels for the layers of the 1-D CNN.

Tensors are laid out ``(batch, length, channels)``. Each ``*_forward``
returns ``(output, cache)`` and the matching ``*_backward`` consumes the
cache together with the upstream gradient.
"""

import numpy as np

from ..errors import ShapeError

PROB_FLOOR = 1e-12


def conv1d_forward(x, w, b):
    """Stride-1 convolution with "same" zero padding.

    ``w`` has shape ``(kernel, in_channels, filters)``;
    ``out[b, i, f] = b[f] + sum_{k,c} w[k, c, f] * x[b, i + k - kernel // 2, c]``.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be (batch, length, channels), got {x.shape}")
    K, C, F = w.shape
    if x.shape[2] != C:
        raise ShapeError(f"input has {x.shape[2]} channels, kernel expects {C}")
    B, L, _ = x.shape
    left = K // 2
    # im2col written in place: tap k holds x shifted by k - left, zero past the edges
    cols = np.empty((B, L, K, C), dtype=x.dtype)
    for k in range(K):
        s = k - left
        lo, hi = max(0, -s), min(L, L - s)
        cols[:, lo:hi, k, :] = x[:, lo + s:hi + s, :]
        cols[:, :lo, k, :] = 0
        cols[:, hi:, k, :] = 0
    cols = cols.reshape(B * L, K * C)
    out = (cols @ w.reshape(K * C, F)).reshape(B, L, F)
    out += b
    return out, (cols, x.shape, w)


def conv1d_backward(dout, cache, need_dx=True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is false."""
    cols, (B, L, C), w = cache
    K, _, F = w.shape
    d2 = dout.reshape(B * L, F)
    dw = (cols.T @ d2).reshape(K, C, F)
    db = dout.sum(axis=(0, 1))
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(K * C, F).T).reshape(B, L, K, C)
    left = K // 2
    dxp = np.zeros((B, L + K - 1, C), dtype=dout.dtype)
    for k in range(K):
        dxp[:, k:k + L, :] += dcols[:, :, k, :]
    return dxp[:, left:left + L, :], dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=0.9, eps=1e-5, update=True, overwrite=False):
    """Per-channel normalization over batch and length.

    In train mode the batch statistics are used and, when ``update`` is set,
    folded into the running buffers in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    With ``overwrite`` the input buffer is reused for the normalized values.
    """
    centered = x if overwrite else None
    if train:
        if x.shape[0] * x.shape[1] < 2:
            raise ShapeError("batch norm in train mode needs at least two values per channel")
        n = x.shape[0] * x.shape[1]
        flat = x.reshape(n, x.shape[2])
        # column sums as a matrix-vector product run far faster than a strided reduce
        mean = (np.ones(n, dtype=x.dtype) @ flat) / x.dtype.type(n)
        centered = np.subtract(x, mean, out=centered)
        var = np.einsum("blc,blc->c", centered, centered) / n
        if update:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        centered = np.subtract(x, running_mean, out=centered)
        var = running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered
    xhat *= inv
    out = xhat * gamma
    out += beta
    return out, (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = np.einsum("blc,blc->c", dout, xhat)
    dbeta = dout.sum(axis=(0, 1))
    if not train:
        return dout * (gamma * inv), dgamma, dbeta
    m = dout.shape[0] * dout.shape[1]
    # dx = gamma * inv * (dout - mean(dout) - xhat * mean(dout * xhat))
    dx = xhat * (dgamma / m)
    dx += dbeta / m
    np.subtract(dout, dx, out=dx)
    dx *= gamma * inv
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, pool=2):
    """Non-overlapping max over windows of ``pool`` along length; tail dropped.

    Ties pick the first element of the window.
    """
    B, L, C = x.shape
    if L < pool:
        raise ShapeError(f"cannot pool length {L} with window {pool}")
    n = L // pool
    if pool == 2:
        a, b = x[:, 0:2 * n:2, :], x[:, 1:2 * n:2, :]
        second = b > a
        return np.maximum(a, b), (second, x.shape, pool)
    windows = x[:, :n * pool, :].reshape(B, n, pool, C)
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (arg, x.shape, pool)


def maxpool_backward(dout, cache):
    arg, (B, L, C), pool = cache
    n = dout.shape[1]
    if pool == 2:
        dx = np.empty((B, L, C), dtype=dout.dtype)
        odd = dx[:, 1:2 * n:2, :]
        np.multiply(dout, arg, out=odd)
        np.subtract(dout, odd, out=dx[:, 0:2 * n:2, :])
        dx[:, 2 * n:, :] = 0
        return dx
    dx = np.zeros((B, L, C), dtype=dout.dtype)
    dwin = np.zeros((B, n, pool, C), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[:, :, None, :], dout[:, :, None, :], axis=2)
    dx[:, :n * pool, :] = dwin.reshape(B, n * pool, C)
    return dx


def dropout_forward(x, rate, rng, train):
    """Inverted dropout; identity outside training or at rate 0.

    Units are dropped when a uniform 16-bit draw falls below
    ``round(rate * 2**16)``, so the drop probability is ``rate`` to within
    2**-17. The 16-bit draw costs less than half of a float draw.
    """
    if not train or rate == 0:
        return x, None
    keep = rng.integers(0, 1 << 16, size=x.shape, dtype=np.uint16) >= round(rate * (1 << 16))
    mask = keep * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def dense_forward(x, w, b):
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense input width {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits):
    """Row-wise softmax.

    Probabilities more than ~18 nats above the smallest normal float are
    set to zero. Left in, their subnormal products slow every matrix
    product of the backward pass by several times, while their value is
    below 1e-30 in single precision.
    """
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    e[z < np.log(np.finfo(e.dtype).tiny) + 18.0] = 0.0
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, targets):
    """Mean negative log-probability of the true class (targets are one-hot)."""
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    true_p = np.sum(probs * targets, axis=-1)
    # adding 0.0 turns a -0.0 from a perfect fit into 0.0
    return float(-np.mean(np.log(np.maximum(true_p, PROB_FLOOR)))) + 0.0


def softmax_cross_entropy_backward(probs, targets):
    """Gradient of mean cross-entropy with respect to the logits: ``(p - y) / N``."""
    return (probs - targets) / probs.shape[0]

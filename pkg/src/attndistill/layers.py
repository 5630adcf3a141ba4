"""Layer primitives with hand-derived backward passes.

Each forward returns (out, cache); the matching backward consumes the
upstream gradient and the cache. Convolution, pooling and warp inner
loops live in the kernel backends; normalization, activations and the
classifier head are plain vectorized numpy.
"""

import numpy as np

from . import backend

NORM_EPS = 1e-5


# ---------------------------------------------------------------- conv


def conv3x3(x, w, b):
    out = backend.active().conv3x3_forward(x, w, b)
    return out, (x, w)


def conv3x3_backward(dout, cache, need_param_grads=False):
    x, w = cache
    dx = backend.active().conv3x3_input_grad(dout, w)
    if not need_param_grads:
        return dx, None, None
    dw = backend.active().conv3x3_weight_grad(dout, x)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


# ---------------------------------------------------------------- norms


def groupnorm(x, gamma, beta, groups):
    """Normalize per (sample, group); instance norm is groups=C, layer norm groups=1."""
    b, c, h, w = x.shape
    xg = x.reshape(b, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = ((xg - mu) * inv).reshape(b, c, h, w)
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv, gamma, groups)


def groupnorm_backward(dout, cache, need_param_grads=False):
    xhat, inv, gamma, groups = cache
    b, c, h, w = dout.shape
    dxhat = (dout * gamma[None, :, None, None]).reshape(b, groups, -1)
    xh = xhat.reshape(b, groups, -1)
    m1 = dxhat.mean(axis=2, keepdims=True)
    m2 = (dxhat * xh).mean(axis=2, keepdims=True)
    dx = (inv * (dxhat - m1 - xh * m2)).reshape(b, c, h, w).astype(dout.dtype, copy=False)
    if not need_param_grads:
        return dx, None, None
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    return dx, dgamma, dbeta


def batchnorm(x, gamma, beta, run_mu, run_var, train, momentum=0.1):
    """Batch norm over (B, H, W) per channel; running stats (biased) updated in train mode."""
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        run_mu *= 1.0 - momentum
        run_mu += momentum * mu
        run_var *= 1.0 - momentum
        run_var += momentum * var
    else:
        mu, var = run_mu, run_var
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache, need_param_grads=False):
    xhat, inv, gamma, train = cache
    dxhat = dout * gamma[None, :, None, None]
    if train:
        m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        dx = inv[None, :, None, None] * (dxhat - m1 - xhat * m2)
    else:
        dx = inv[None, :, None, None] * dxhat
    dx = dx.astype(dout.dtype, copy=False)
    if not need_param_grads:
        return dx, None, None
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- activations


def activation(x, kind):
    if kind == "relu":
        out = np.maximum(x, 0)
        return out, (kind, x)
    if kind == "leakyrelu":
        out = np.where(x > 0, x, x * x.dtype.type(0.01))
        return out, (kind, x)
    if kind == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-x))
        return out.astype(x.dtype, copy=False), (kind, out)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dout, cache):
    kind, saved = cache
    if kind == "relu":
        return dout * (saved > 0)
    if kind == "leakyrelu":
        return dout * np.where(saved > 0, saved.dtype.type(1.0), saved.dtype.type(0.01))
    return dout * saved * (1.0 - saved)


# ---------------------------------------------------------------- pooling


def pool(x, kind):
    if kind == "none":
        return x, ("none", x.shape)
    if kind == "avg":
        out = backend.active().avgpool3x3s2_forward(x)
        return out, ("avg", x.shape)
    if kind == "max":
        out, arg = backend.active().maxpool3x3s2_forward(x)
        return out, ("max", x.shape, arg)
    raise ValueError(f"unknown pooling {kind!r}")


def pool_backward(dout, cache):
    kind = cache[0]
    if kind == "none":
        return dout
    h, w = cache[1][2], cache[1][3]
    if kind == "avg":
        return backend.active().avgpool3x3s2_backward(dout, h, w)
    return backend.active().maxpool3x3s2_backward(dout, cache[2], h, w)


def pooled_size(h, w):
    return (h - 1) // 2 + 1, (w - 1) // 2 + 1


# ---------------------------------------------------------------- head


def linear(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dout, cache, need_param_grads=False):
    x, w = cache
    dx = dout @ w.T
    if not need_param_grads:
        return dx, None, None
    return dx, x.T @ dout, dout.sum(axis=0)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-30))
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits.astype(logits.dtype, copy=False)

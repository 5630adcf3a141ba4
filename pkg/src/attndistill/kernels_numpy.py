"""Pure-numpy reference kernels.

These are the fallback implementations of the hot inner loops: 3x3
convolution, 3x3/stride-2 pooling, and bilinear warp gather/scatter.
The numba backend must match these numerically (same summation
structure, same tie rules); parity is enforced by tests.

Shape conventions: images are [B, C, H, W]; conv weights [F, C, 3, 3];
pooling uses kernel 3, stride 2, zero padding 1, so even sizes halve
exactly. Warp grids ys/xs are [B, H, W] source coordinates in input
pixel space; samples outside the image read as zero.
"""

import numpy as np

NAME = "numpy"


def _pad1(x):
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    return xp


def conv3x3_forward(x, w, bias):
    b, c, h, wd = x.shape
    f = w.shape[0]
    xp = _pad1(x)
    acc = np.zeros((f, b, h, wd), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            acc += np.tensordot(
                w[:, :, ki, kj], xp[:, :, ki : ki + h, kj : kj + wd], axes=([1], [1])
            )
    out = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))
    out += bias[None, :, None, None]
    return out


def conv3x3_input_grad(dout, w):
    b, f, h, wd = dout.shape
    c = w.shape[1]
    dxp = np.zeros((c, b, h + 2, wd + 2), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki : ki + h, kj : kj + wd] += np.tensordot(
                w[:, :, ki, kj], dout, axes=([0], [1])
            )
    return np.ascontiguousarray(dxp[:, :, 1 : h + 1, 1 : wd + 1].transpose(1, 0, 2, 3))


def conv3x3_weight_grad(dout, x):
    f = dout.shape[1]
    c = x.shape[1]
    h, wd = x.shape[2], x.shape[3]
    xp = _pad1(x)
    dw = np.empty((f, c, 3, 3), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dw[:, :, ki, kj] = np.tensordot(
                dout, xp[:, :, ki : ki + h, kj : kj + wd], axes=([0, 2, 3], [0, 2, 3])
            )
    return dw


def _pool_out_size(h, w):
    return (h - 1) // 2 + 1, (w - 1) // 2 + 1


def avgpool3x3s2_forward(x):
    b, c, h, w = x.shape
    ho, wo = _pool_out_size(h, w)
    xp = _pad1(x)
    out = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            out += xp[:, :, ki : ki + 2 * ho - 1 : 2, kj : kj + 2 * wo - 1 : 2]
    # fixed divisor 9: zero padding counts toward the average
    out *= x.dtype.type(1.0 / 9.0)
    return out


def avgpool3x3s2_backward(dout, h, w):
    b, c, ho, wo = dout.shape
    g = dout * dout.dtype.type(1.0 / 9.0)
    dxp = np.zeros((b, c, h + 2, w + 2), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki : ki + 2 * ho - 1 : 2, kj : kj + 2 * wo - 1 : 2] += g
    return dxp[:, :, 1 : h + 1, 1 : w + 1].copy()


def maxpool3x3s2_forward(x):
    b, c, h, w = x.shape
    ho, wo = _pool_out_size(h, w)
    xp = np.full((b, c, h + 2, w + 2), -np.inf, dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    taps = np.empty((9, b, c, ho, wo), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            taps[ki * 3 + kj] = xp[:, :, ki : ki + 2 * ho - 1 : 2, kj : kj + 2 * wo - 1 : 2]
    arg = np.argmax(taps, axis=0).astype(np.int8)  # first max wins ties
    out = np.max(taps, axis=0)
    return out, arg


def maxpool3x3s2_backward(dout, arg, h, w):
    b, c, ho, wo = dout.shape
    dxp = np.zeros((b, c, h + 2, w + 2), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            mask = arg == ki * 3 + kj
            dxp[:, :, ki : ki + 2 * ho - 1 : 2, kj : kj + 2 * wo - 1 : 2] += dout * mask
    return dxp[:, :, 1 : h + 1, 1 : w + 1].copy()


def _bilinear_taps(ys, xs, h, w):
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = (wy if dy else 1.0 - wy) * (wx if dx else 1.0 - wx)
            weight = weight * valid
            flat = np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1)
            yield flat, weight


def bilinear_gather(x, ys, xs):
    b, c, h, w = x.shape
    xf = x.reshape(b, c, h * w)
    out = np.zeros_like(x)
    for flat, weight in _bilinear_taps(ys, xs, h, w):
        idx = np.broadcast_to(flat.reshape(b, 1, -1), (b, c, flat.shape[1] * flat.shape[2]))
        vals = np.take_along_axis(xf, idx, axis=2).reshape(x.shape)
        out += vals * weight[:, None, :, :].astype(x.dtype)
    return out


def bilinear_scatter(dout, ys, xs, h, w):
    b, c, ho, wo = dout.shape
    dx = np.zeros((b, c, h, w), dtype=dout.dtype)
    dxf = dx.reshape(-1)
    base = (np.arange(b)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
    for flat, weight in _bilinear_taps(ys, xs, h, w):
        vals = dout * weight[:, None, :, :].astype(dout.dtype)
        gidx = base + flat[:, None, :, :]
        np.add.at(dxf, gidx.ravel(), vals.ravel())
    return dx

"""Numba-accelerated kernels for the hot inner loops.

Same contracts as kernels_numpy. Loops accumulate in float64 and cast on
store, so float32 results can differ from the numpy backend in the last
few ulps; parity tests use tolerances. Tie rules (maxpool first-max) and
bounds semantics match the numpy backend exactly.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def conv3x3_forward(x, w, bias):
    b, c, h, wd = x.shape
    f = w.shape[0]
    out = np.empty((b, f, h, wd), dtype=x.dtype)
    for bi in range(b):
        for fi in range(f):
            for i in range(h):
                for j in range(wd):
                    s = 0.0
                    for ci in range(c):
                        for ki in range(3):
                            ii = i + ki - 1
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(3):
                                jj = j + kj - 1
                                if jj < 0 or jj >= wd:
                                    continue
                                s += w[fi, ci, ki, kj] * x[bi, ci, ii, jj]
                    out[bi, fi, i, j] = s + bias[fi]
    return out


@njit(cache=True)
def conv3x3_input_grad(dout, w):
    b, f, h, wd = dout.shape
    c = w.shape[1]
    dx = np.empty((b, c, h, wd), dtype=dout.dtype)
    for bi in range(b):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    s = 0.0
                    for fi in range(f):
                        for ki in range(3):
                            oi = i - ki + 1
                            if oi < 0 or oi >= h:
                                continue
                            for kj in range(3):
                                oj = j - kj + 1
                                if oj < 0 or oj >= wd:
                                    continue
                                s += dout[bi, fi, oi, oj] * w[fi, ci, ki, kj]
                    dx[bi, ci, i, j] = s
    return dx


@njit(cache=True)
def conv3x3_weight_grad(dout, x):
    b, f, h, wd = dout.shape
    c = x.shape[1]
    dw = np.empty((f, c, 3, 3), dtype=dout.dtype)
    for fi in range(f):
        for ci in range(c):
            for ki in range(3):
                for kj in range(3):
                    s = 0.0
                    for bi in range(b):
                        for i in range(h):
                            ii = i + ki - 1
                            if ii < 0 or ii >= h:
                                continue
                            for j in range(wd):
                                jj = j + kj - 1
                                if jj < 0 or jj >= wd:
                                    continue
                                s += dout[bi, fi, i, j] * x[bi, ci, ii, jj]
                    dw[fi, ci, ki, kj] = s
    return dw


@njit(cache=True)
def avgpool3x3s2_forward(x):
    b, c, h, w = x.shape
    ho = (h - 1) // 2 + 1
    wo = (w - 1) // 2 + 1
    out = np.empty((b, c, ho, wo), dtype=x.dtype)
    for bi in range(b):
        for ci in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    s = 0.0
                    for ki in range(3):
                        ii = 2 * oi + ki - 1
                        if ii < 0 or ii >= h:
                            continue
                        for kj in range(3):
                            jj = 2 * oj + kj - 1
                            if jj < 0 or jj >= w:
                                continue
                            s += x[bi, ci, ii, jj]
                    out[bi, ci, oi, oj] = s / 9.0
    return out


@njit(cache=True)
def avgpool3x3s2_backward(dout, h, w):
    b, c, ho, wo = dout.shape
    dx = np.zeros((b, c, h, w), dtype=dout.dtype)
    for bi in range(b):
        for ci in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    g = dout[bi, ci, oi, oj] / 9.0
                    for ki in range(3):
                        ii = 2 * oi + ki - 1
                        if ii < 0 or ii >= h:
                            continue
                        for kj in range(3):
                            jj = 2 * oj + kj - 1
                            if jj < 0 or jj >= w:
                                continue
                            dx[bi, ci, ii, jj] += g
    return dx


@njit(cache=True)
def maxpool3x3s2_forward(x):
    b, c, h, w = x.shape
    ho = (h - 1) // 2 + 1
    wo = (w - 1) // 2 + 1
    out = np.empty((b, c, ho, wo), dtype=x.dtype)
    arg = np.empty((b, c, ho, wo), dtype=np.int8)
    for bi in range(b):
        for ci in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    best = -np.inf
                    tap = -1
                    for ki in range(3):
                        ii = 2 * oi + ki - 1
                        if ii < 0 or ii >= h:
                            continue
                        for kj in range(3):
                            jj = 2 * oj + kj - 1
                            if jj < 0 or jj >= w:
                                continue
                            v = x[bi, ci, ii, jj]
                            if v > best:  # first max wins ties
                                best = v
                                tap = ki * 3 + kj
                    out[bi, ci, oi, oj] = best
                    arg[bi, ci, oi, oj] = tap
    return out, arg


@njit(cache=True)
def maxpool3x3s2_backward(dout, arg, h, w):
    b, c, ho, wo = dout.shape
    dx = np.zeros((b, c, h, w), dtype=dout.dtype)
    for bi in range(b):
        for ci in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    tap = arg[bi, ci, oi, oj]
                    ii = 2 * oi + tap // 3 - 1
                    jj = 2 * oj + tap % 3 - 1
                    dx[bi, ci, ii, jj] += dout[bi, ci, oi, oj]
    return dx


@njit(cache=True)
def bilinear_gather(x, ys, xs):
    b, c, h, w = x.shape
    out = np.zeros_like(x)
    for bi in range(b):
        for i in range(ys.shape[1]):
            for j in range(ys.shape[2]):
                sy = ys[bi, i, j]
                sx = xs[bi, i, j]
                y0 = int(np.floor(sy))
                x0 = int(np.floor(sx))
                wy = sy - y0
                wx = sx - x0
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    fy = wy if dy == 1 else 1.0 - wy
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= w:
                            continue
                        weight = fy * (wx if dx == 1 else 1.0 - wx)
                        for ci in range(c):
                            out[bi, ci, i, j] += weight * x[bi, ci, yy, xx]
    return out


@njit(cache=True)
def bilinear_scatter(dout, ys, xs, h, w):
    b, c = dout.shape[0], dout.shape[1]
    dx = np.zeros((b, c, h, w), dtype=dout.dtype)
    for bi in range(b):
        for i in range(ys.shape[1]):
            for j in range(ys.shape[2]):
                sy = ys[bi, i, j]
                sx = xs[bi, i, j]
                y0 = int(np.floor(sy))
                x0 = int(np.floor(sx))
                wy = sy - y0
                wx = sx - x0
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    fy = wy if dy == 1 else 1.0 - wy
                    for dx_ in range(2):
                        xx = x0 + dx_
                        if xx < 0 or xx >= w:
                            continue
                        weight = fy * (wx if dx_ == 1 else 1.0 - wx)
                        for ci in range(c):
                            dx[bi, ci, yy, xx] += weight * dout[bi, ci, i, j]
    return dx

"""Differentiable Siamese augmentation.

One op is drawn uniformly from the enabled set per matching step; its
parameter draws are shared by the real and synthetic batches of the pair
(the caller applies the same AugParams to both). Every op is linear in
the pixels, so gradients flow through exactly: warps (rotate/scale) use
bilinear interpolation with zero padding, cutout is a multiplicative
mask, crop is a zero-padded shift.

Draws default to one set per batch. With per_image=True each batch
element gets its own draw; pairs then share draws by element index.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ParameterError

DEFAULT_OPS = ("color", "crop", "cutout", "flip", "scale", "rotate")


@dataclass
class AugmentConfig:
    enabled: tuple = DEFAULT_OPS
    per_image: bool = False
    brightness: float = 1.0
    saturation: float = 2.0
    contrast: float = 0.5
    crop_pad: float = 0.125
    cutout_ratio: float = 0.5
    flip_prob: float = 0.5
    scale_ratio: float = 1.2
    rotate_deg: float = 15.0


@dataclass
class AugParams:
    op: str
    draws: dict
    per_image: bool = False


def sample_aug(rng, cfg=None, batch_size=None):
    """Draw one op and its parameters. batch_size is required only for
    per-image draws; the draws then cover a batch of up to that size."""
    cfg = cfg or AugmentConfig()
    if not cfg.enabled:
        raise ParameterError("no augmentation ops enabled")
    per_image = cfg.per_image
    if per_image and batch_size is None:
        raise ParameterError("per-image draws need batch_size")
    n = batch_size if per_image else None

    def u():
        return rng.random(n) if per_image else float(rng.random())

    op = cfg.enabled[int(rng.integers(len(cfg.enabled)))]
    if op == "color":
        draws = {
            "brightness": (u() - 0.5) * cfg.brightness,
            "saturation": u() * cfg.saturation,
            "contrast": 1.0 + (u() - 0.5) * cfg.contrast,
        }
    elif op == "crop":
        draws = {"uy": u(), "ux": u()}
    elif op == "cutout":
        draws = {"uy": u(), "ux": u(), "ratio": cfg.cutout_ratio}
    elif op == "flip":
        draws = {"flip": u() < cfg.flip_prob}
    elif op == "scale":
        lo, hi = 1.0 / cfg.scale_ratio, cfg.scale_ratio
        draws = {"sy": lo + u() * (hi - lo), "sx": lo + u() * (hi - lo)}
    elif op == "rotate":
        draws = {"angle_deg": (u() * 2.0 - 1.0) * cfg.rotate_deg}
    else:
        raise ParameterError(f"unknown augmentation op {op!r}")
    if op == "crop":
        draws["pad"] = cfg.crop_pad
    return AugParams(op=op, draws=draws, per_image=per_image)


def _draw(params, key, b):
    """Draw as an array of length b (per-image) or a python scalar."""
    v = params.draws[key]
    if params.per_image:
        v = np.asarray(v)
        if v.shape[0] < b:
            raise ParameterError(
                f"per-image draws cover {v.shape[0]} elements, batch has {b}"
            )
        return v[:b]
    return v


def _bshape(v, b):
    if np.ndim(v) == 0:
        return v
    return np.asarray(v).reshape(b, 1, 1, 1)


# ---------------------------------------------------------------- ops


def _color_fwd(x, params):
    b = x.shape[0]
    shift = _bshape(_draw(params, "brightness", b), b)
    sat = _bshape(_draw(params, "saturation", b), b)
    con = _bshape(_draw(params, "contrast", b), b)
    x1 = x + np.asarray(shift, dtype=x.dtype)
    m_pix = x1.mean(axis=1, keepdims=True)
    x2 = (x1 - m_pix) * np.asarray(sat, dtype=x.dtype) + m_pix
    m_img = x2.mean(axis=(1, 2, 3), keepdims=True)
    out = (x2 - m_img) * np.asarray(con, dtype=x.dtype) + m_img
    return out, ("color", sat, con)


def _color_bwd(dout, cache):
    _, sat, con = cache
    con = np.asarray(con, dtype=dout.dtype)
    sat = np.asarray(sat, dtype=dout.dtype)
    d2 = con * dout + (1.0 - con) * dout.mean(axis=(1, 2, 3), keepdims=True)
    d1 = sat * d2 + (1.0 - sat) * d2.mean(axis=1, keepdims=True)
    return d1


def _crop_fwd(x, params):
    b, c, h, w = x.shape
    pad = int(round(h * params.draws["pad"]))
    pad_w = int(round(w * params.draws["pad"]))
    uy = np.asarray(_draw(params, "uy", b))
    ux = np.asarray(_draw(params, "ux", b))
    oy = np.minimum(np.floor(uy * (2 * pad + 1)), 2 * pad).astype(np.int64)
    ox = np.minimum(np.floor(ux * (2 * pad_w + 1)), 2 * pad_w).astype(np.int64)
    oy = oy if oy.ndim else np.full(b, oy)
    ox = ox if ox.ndim else np.full(b, ox)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad_w), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad_w : pad_w + w] = x
    out = np.empty_like(x)
    for i in range(b):
        out[i] = xp[i, :, oy[i] : oy[i] + h, ox[i] : ox[i] + w]
    return out, ("crop", pad, pad_w, oy, ox)


def _crop_bwd(dout, cache):
    _, pad, pad_w, oy, ox = cache
    b, c, h, w = dout.shape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad_w), dtype=dout.dtype)
    for i in range(b):
        dxp[i, :, oy[i] : oy[i] + h, ox[i] : ox[i] + w] = dout[i]
    return dxp[:, :, pad : pad + h, pad_w : pad_w + w].copy()


def _cutout_fwd(x, params):
    b, c, h, w = x.shape
    ratio = params.draws["ratio"]
    sh, sw = int(round(h * ratio)), int(round(w * ratio))
    uy = np.asarray(_draw(params, "uy", b))
    ux = np.asarray(_draw(params, "ux", b))
    oy = np.minimum(np.floor(uy * (h - sh + 1)), h - sh).astype(np.int64)
    ox = np.minimum(np.floor(ux * (w - sw + 1)), w - sw).astype(np.int64)
    oy = oy if oy.ndim else np.full(b, oy)
    ox = ox if ox.ndim else np.full(b, ox)
    mask = np.ones((b, 1, h, w), dtype=x.dtype)
    for i in range(b):
        mask[i, :, oy[i] : oy[i] + sh, ox[i] : ox[i] + sw] = 0
    return x * mask, ("cutout", mask)


def _cutout_bwd(dout, cache):
    return dout * cache[1]


def _flip_fwd(x, params):
    b = x.shape[0]
    f = _draw(params, "flip", b)
    if params.per_image:
        f = np.asarray(f).reshape(b, 1, 1, 1)
        out = np.where(f, x[:, :, :, ::-1], x)
        return out, ("flip", f)
    out = x[:, :, :, ::-1].copy() if f else x
    return out, ("flip", f)


def _flip_bwd(dout, cache):
    f = cache[1]
    if isinstance(f, np.ndarray):
        return np.where(f, dout[:, :, :, ::-1], dout)
    return dout[:, :, :, ::-1].copy() if f else dout


def _warp_grid(b, h, w, src_y, src_x):
    """Materialize [B, H, W] float64 source-coordinate grids."""
    ys = np.ascontiguousarray(np.broadcast_to(src_y, (b, h, w)), dtype=np.float64)
    xs = np.ascontiguousarray(np.broadcast_to(src_x, (b, h, w)), dtype=np.float64)
    return ys, xs


def _scale_fwd(x, params):
    b, c, h, w = x.shape
    sy = np.asarray(_draw(params, "sy", b), dtype=np.float64)
    sx = np.asarray(_draw(params, "sx", b), dtype=np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]
    if params.per_image:
        src_y = cy + (ii[None] - cy) / sy[:, None, None]
        src_x = cx + (jj[None] - cx) / sx[:, None, None]
    else:
        src_y = np.broadcast_to(cy + (ii - cy) / sy, (h, w))
        src_x = np.broadcast_to(cx + (jj - cx) / sx, (h, w))
    ys, xs = _warp_grid(b, h, w, src_y, src_x)
    out = backend.active().bilinear_gather(x, ys, xs)
    return out, ("warp", ys, xs, h, w)


def _rotate_fwd(x, params):
    b, c, h, w = x.shape
    ang = np.asarray(_draw(params, "angle_deg", b), dtype=np.float64) * (math.pi / 180.0)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ii = np.arange(h)[:, None] - cy
    jj = np.arange(w)[None, :] - cx
    cos, sin = np.cos(ang), np.sin(ang)
    if params.per_image:
        cos = cos[:, None, None]
        sin = sin[:, None, None]
        src_y = cy + ii[None] * cos - jj[None] * sin
        src_x = cx + ii[None] * sin + jj[None] * cos
    else:
        src_y = cy + ii * cos - jj * sin
        src_x = cx + ii * sin + jj * cos
    ys, xs = _warp_grid(b, h, w, src_y, src_x)
    out = backend.active().bilinear_gather(x, ys, xs)
    return out, ("warp", ys, xs, h, w)


def _warp_bwd(dout, cache):
    _, ys, xs, h, w = cache
    return backend.active().bilinear_scatter(dout, ys, xs, h, w)


_FWD = {
    "color": _color_fwd,
    "crop": _crop_fwd,
    "cutout": _cutout_fwd,
    "flip": _flip_fwd,
    "scale": _scale_fwd,
    "rotate": _rotate_fwd,
}

_BWD = {
    "color": _color_bwd,
    "crop": _crop_bwd,
    "cutout": _cutout_bwd,
    "flip": _flip_bwd,
    "scale": _warp_bwd,
    "rotate": _warp_bwd,
}


def apply_aug_fwd(batch, params):
    """Apply one op; returns (out, cache) for the backward pass."""
    if batch.ndim != 4:
        raise ParameterError(f"expected [B, C, H, W] batch, got shape {batch.shape}")
    if params.op not in _FWD:
        raise ParameterError(f"unknown augmentation op {params.op!r}")
    return _FWD[params.op](batch, params)


def apply_aug(batch, params):
    out, _ = apply_aug_fwd(batch, params)
    return out


def apply_aug_vjp(dout, cache):
    """Pull a gradient on the augmented batch back to the input batch."""
    kind = cache[0] if cache[0] != "warp" else "scale"
    return _BWD[kind](dout, cache)

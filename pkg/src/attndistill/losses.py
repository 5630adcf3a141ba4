"""Attention statistics and the matching losses.

Spatial attention collapses a feature map over channels into a per-
location energy map; channel attention collapses over locations into a
per-filter energy vector. Both raise absolute activations to a power
before summing, get L2-normalized per sample, and the matching loss is
the squared distance between the real-batch mean and synthetic-batch
mean of those normalized vectors, summed over layers. The embedding
regularizer is the linear-kernel MMD: squared distance between mean
embeddings.

Every term comes with a hand-derived gradient with respect to the
synthetic-side features; the real side is treated as constant.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError

NORMALIZE_EPS = 1e-8

MATCH_MODES = ("spatial", "channel", "both", "feature")


@dataclass
class AttentionVector:
    kind: str  # "spatial" or "channel"
    values: np.ndarray  # [B, H*W] or [B, C]
    layer_index: int
    power: float


@dataclass
class LossBreakdown:
    attn: float
    mmd: float
    total: float
    lam: float
    per_layer: list


def _check_power(p):
    if p < 1:
        raise ParameterError(f"attention power must be >= 1, got {p}")


def spatial_attention_map(f, power):
    """Sum over channels of |f|^power, flattened to [B, H*W]."""
    _check_power(power)
    b = f.shape[0]
    return (np.abs(f) ** power).sum(axis=1).reshape(b, -1)


def channel_attention_map(f, power):
    """Sum over spatial positions of |f|^power, shape [B, C]."""
    _check_power(power)
    return (np.abs(f) ** power).sum(axis=(2, 3))


def spatial_attention(f, power, layer_index=0):
    return AttentionVector("spatial", spatial_attention_map(f, power), layer_index, power)


def channel_attention(f, power, layer_index=0):
    return AttentionVector("channel", channel_attention_map(f, power), layer_index, power)


def _attention_vjp(f, power, da, kind):
    """Pull a gradient on the attention vector back onto the feature map.

    d|f|^p/df = p * |f|^(p-1) * sign(f); sign(0) = 0 handles the p=1 kink.
    """
    b, c, h, w = f.shape
    if kind == "spatial":
        da4 = da.reshape(b, 1, h, w)
    else:
        da4 = da.reshape(b, c, 1, 1)
    if power == 1:
        return (da4 * np.sign(f)).astype(f.dtype, copy=False)
    return (da4 * power * np.abs(f) ** (power - 1) * np.sign(f)).astype(f.dtype, copy=False)


def normalize_rows(z, eps=NORMALIZE_EPS):
    """Divide each row by max(||row||_2, eps); zero rows stay zero."""
    if eps < 0:
        raise ParameterError("eps must be >= 0")
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    return z / np.maximum(norms, eps)


def _normalize_rows_vjp(z, dy, eps=NORMALIZE_EPS):
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, eps)
    dz = dy / safe
    live = norms > eps  # below eps the denominator is constant
    inner = (z * dy).sum(axis=1, keepdims=True)
    dz -= np.where(live, z * inner / safe**3, 0.0)
    return dz.astype(z.dtype, copy=False)


def _mean_match(rows_real, rows_syn):
    """||mean(rows_real) - mean(rows_syn)||^2 and its gradient on rows_syn."""
    diff = rows_real.mean(axis=0) - rows_syn.mean(axis=0)
    loss = float(diff @ diff)
    drows = np.broadcast_to(
        -2.0 * diff / rows_syn.shape[0], rows_syn.shape
    ).astype(rows_syn.dtype)
    return loss, drows


def _layer_term(f_real, f_syn, kind, power, eps):
    if kind == "feature":
        b_r, b_s = f_real.shape[0], f_syn.shape[0]
        loss, drows = _mean_match(f_real.reshape(b_r, -1), f_syn.reshape(b_s, -1))
        return loss, drows.reshape(f_syn.shape)
    attn = spatial_attention_map if kind == "spatial" else channel_attention_map
    a_r = attn(f_real, power)
    a_s = attn(f_syn, power)
    loss, dnorm = _mean_match(normalize_rows(a_r, eps), normalize_rows(a_s, eps))
    da = _normalize_rows_vjp(a_s, dnorm, eps)
    return loss, _attention_vjp(f_syn, power, da, kind)


def attention_matching_loss(
    real_stack,
    syn_stack,
    p_s,
    p_c,
    mode="both",
    eps=NORMALIZE_EPS,
    channel_weight=1.0,
    want_grads=False,
):
    """Layer-summed matching loss for one real/synthetic class pair.

    Returns (loss, per_layer) or (loss, per_layer, d_per_layer) where
    d_per_layer holds gradients on the synthetic feature maps. mode
    "both" adds the spatial and channel terms (channel scaled by
    channel_weight); "feature" matches raw mean feature maps without
    normalization, for the ablation harness.
    """
    if mode not in MATCH_MODES:
        raise ParameterError(f"mode must be one of {MATCH_MODES}, got {mode!r}")
    if len(real_stack.per_layer) != len(syn_stack.per_layer):
        raise ContractError(
            f"layer count mismatch: {len(real_stack.per_layer)} vs {len(syn_stack.per_layer)}"
        )
    total = 0.0
    per_layer = []
    d_per_layer = []
    for f_real, f_syn in zip(real_stack.per_layer, syn_stack.per_layer):
        if f_real.shape[1:] != f_syn.shape[1:]:
            raise ContractError(
                f"feature shape mismatch: {f_real.shape[1:]} vs {f_syn.shape[1:]}"
            )
        term = 0.0
        grad = np.zeros_like(f_syn) if want_grads else None
        if mode in ("spatial", "both"):
            loss, df = _layer_term(f_real, f_syn, "spatial", p_s, eps)
            term += loss
            if want_grads:
                grad += df
        if mode in ("channel", "both"):
            loss, df = _layer_term(f_real, f_syn, "channel", p_c, eps)
            scale = channel_weight if mode == "both" else 1.0
            term += scale * loss
            if want_grads:
                grad += np.asarray(scale, dtype=df.dtype) * df
        if mode == "feature":
            term, df = _layer_term(f_real, f_syn, "feature", 1.0, eps)
            if want_grads:
                grad = df
        total += term
        per_layer.append(term)
        d_per_layer.append(grad)
    if want_grads:
        return total, per_layer, d_per_layer
    return total, per_layer


def mmd_loss(real_embed, syn_embed):
    """Linear-kernel MMD: squared distance between mean embeddings."""
    if real_embed.shape[1] != syn_embed.shape[1]:
        raise ContractError(
            f"embedding width mismatch: {real_embed.shape[1]} vs {syn_embed.shape[1]}"
        )
    loss, _ = _mean_match(real_embed, syn_embed)
    return loss


def mmd_term(real_embed, syn_embed):
    """mmd_loss plus its gradient on the synthetic embeddings."""
    if real_embed.shape[1] != syn_embed.shape[1]:
        raise ContractError(
            f"embedding width mismatch: {real_embed.shape[1]} vs {syn_embed.shape[1]}"
        )
    return _mean_match(real_embed, syn_embed)


def total_loss(attn, mmd, lam, per_layer=None):
    if lam < 0:
        raise ParameterError(f"task balance must be >= 0, got {lam}")
    return LossBreakdown(
        attn=attn,
        mmd=mmd,
        total=attn + lam * mmd,
        lam=lam,
        per_layer=list(per_layer) if per_layer is not None else [],
    )

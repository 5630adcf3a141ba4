"""Independent scalar-loop oracles used by the loss and acceptance tests.

These deliberately avoid the package's vectorized code paths: plain
python loops and math.sqrt, so they can serve as ground truth.
"""

import math

import numpy as np

from attndistill.nets import FeatureStack


def oracle_spatial(f, p):
    b, c, h, w = f.shape
    out = np.zeros((b, h * w))
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                s = 0.0
                for ci in range(c):
                    s += abs(f[bi, ci, i, j]) ** p
                out[bi, i * w + j] = s
    return out


def oracle_channel(f, p):
    b, c, h, w = f.shape
    out = np.zeros((b, c))
    for bi in range(b):
        for ci in range(c):
            s = 0.0
            for i in range(h):
                for j in range(w):
                    s += abs(f[bi, ci, i, j]) ** p
            out[bi, ci] = s
    return out


def oracle_match_loss(f_real, f_syn, kind, p, eps=1e-8):
    """Squared distance between batch means of per-sample L2-normalized
    attention rows, all in scalar arithmetic."""
    attn = oracle_spatial if kind == "spatial" else oracle_channel
    rows_r = attn(f_real, p)
    rows_s = attn(f_syn, p)

    def norm_rows(rows):
        out = np.zeros_like(rows)
        for i, row in enumerate(rows):
            n = math.sqrt(sum(v * v for v in row))
            out[i] = row / max(n, eps)
        return out

    mr = norm_rows(rows_r).mean(axis=0)
    ms = norm_rows(rows_s).mean(axis=0)
    return sum((a - b) ** 2 for a, b in zip(mr, ms))


def oracle_spearman(rank_a, rank_b):
    n = len(rank_a)
    d2 = sum((a - b) ** 2 for a, b in zip(rank_a, rank_b))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def stack_of(per_layer, embed=None):
    b = per_layer[0].shape[0]
    if embed is None:
        embed = per_layer[-1].reshape(b, -1)
    return FeatureStack(per_layer=list(per_layer), final_embedding=embed, logits=None)

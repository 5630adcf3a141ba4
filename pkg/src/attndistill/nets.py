"""The ConvNet family used for matching, evaluation, and architecture search.

A network is depth-many blocks of [3x3 conv -> norm -> activation ->
pool(3x3, stride 2)] followed by a linear classifier on the flattened
last block output. Specs live on a fixed grid (720 points); anything off
the grid is rejected.

forward() exposes every block output so the matching losses can inject
gradients at arbitrary depths; backward() propagates those injected
gradients (plus optional embedding/logit gradients) down to the input
pixels and, when asked, to the parameters.
"""

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ContractError, ParameterError

DEPTHS = (1, 2, 3, 4)
WIDTHS = (32, 64, 128, 256)
ACTIVATIONS = ("sigmoid", "relu", "leakyrelu")
NORMS = ("none", "batch", "layer", "instance", "group")
POOLINGS = ("none", "max", "avg")

GROUPNORM_GROUPS = 4  # divides every grid width

_ACT_ALIASES = {"leaky-relu": "leakyrelu", "leaky_relu": "leakyrelu"}


def canonical_activation(name):
    return _ACT_ALIASES.get(name, name)


@dataclass(frozen=True)
class ConvNetSpec:
    depth: int
    width: int
    activation: str
    norm: str
    pooling: str
    in_shape: tuple  # (C, H, W)
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "activation", canonical_activation(self.activation))
        object.__setattr__(self, "in_shape", tuple(int(v) for v in self.in_shape))
        if self.depth not in DEPTHS:
            raise ParameterError(f"depth {self.depth} not in {DEPTHS}")
        if self.width not in WIDTHS:
            raise ParameterError(f"width {self.width} not in {WIDTHS}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation {self.activation!r} not in {ACTIVATIONS}")
        if self.norm not in NORMS:
            raise ParameterError(f"norm {self.norm!r} not in {NORMS}")
        if self.pooling not in POOLINGS:
            raise ParameterError(f"pooling {self.pooling!r} not in {POOLINGS}")
        if len(self.in_shape) != 3 or any(v < 1 for v in self.in_shape):
            raise ParameterError(f"bad input shape {self.in_shape}")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")

    def canonical(self):
        return f"D{self.depth}-W{self.width}-{self.activation}-{self.norm}-{self.pooling}"

    def feature_shapes(self):
        """(C, H, W) of each block output, post-pooling."""
        _, h, w = self.in_shape
        shapes = []
        for _ in range(self.depth):
            if self.pooling != "none":
                h, w = layers.pooled_size(h, w)
            shapes.append((self.width, h, w))
        return shapes

    @property
    def embed_dim(self):
        c, h, w = self.feature_shapes()[-1]
        return c * h * w


@dataclass
class FeatureStack:
    """Block outputs at the configured tap point, plus the flattened
    last-block embedding and classifier logits."""

    per_layer: list
    final_embedding: np.ndarray
    logits: np.ndarray


class Network:
    def __init__(self, spec, seed, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.blocks = []
        self.fc_w = None
        self.fc_b = None
        self.init_weights(seed)

    def _norm_groups(self):
        if self.spec.norm == "group":
            return GROUPNORM_GROUPS
        if self.spec.norm == "layer":
            return 1
        return self.spec.width  # instance

    def init_weights(self, seed):
        """He-normal conv/linear weights, zero biases, unit norm scales."""
        rng = np.random.default_rng(seed)
        spec = self.spec
        self.blocks = []
        c_in = spec.in_shape[0]
        for _ in range(spec.depth):
            std = np.sqrt(2.0 / (c_in * 9))
            blk = {
                "w": (rng.standard_normal((spec.width, c_in, 3, 3)) * std).astype(self.dtype),
                "b": np.zeros(spec.width, dtype=self.dtype),
            }
            if spec.norm != "none":
                blk["gamma"] = np.ones(spec.width, dtype=self.dtype)
                blk["beta"] = np.zeros(spec.width, dtype=self.dtype)
            if spec.norm == "batch":
                blk["run_mu"] = np.zeros(spec.width, dtype=self.dtype)
                blk["run_var"] = np.ones(spec.width, dtype=self.dtype)
            self.blocks.append(blk)
            c_in = spec.width
        e = spec.embed_dim
        std = np.sqrt(2.0 / e)
        self.fc_w = (rng.standard_normal((e, spec.num_classes)) * std).astype(self.dtype)
        self.fc_b = np.zeros(spec.num_classes, dtype=self.dtype)
        return self

    def parameters(self):
        """Flat list of (name, array) pairs, gradient-carrying params only."""
        out = []
        for i, blk in enumerate(self.blocks):
            for key in ("w", "b", "gamma", "beta"):
                if key in blk:
                    out.append((f"block{i}.{key}", blk[key]))
        out.append(("fc_w", self.fc_w))
        out.append(("fc_b", self.fc_b))
        return out

    def forward(self, x, train=False, need_caches=False, tap="post_pool"):
        spec = self.spec
        if x.ndim != 4 or x.shape[1:] != spec.in_shape:
            raise ParameterError(
                f"batch shape {x.shape} does not match network input {spec.in_shape}"
            )
        if tap not in ("post_pool", "pre_pool"):
            raise ParameterError(f"unknown tap point {tap!r}")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        feats = []
        caches = []
        for blk in self.blocks:
            x, c_conv = layers.conv3x3(x, blk["w"], blk["b"])
            if spec.norm == "batch":
                x, c_norm = layers.batchnorm(
                    x, blk["gamma"], blk["beta"], blk["run_mu"], blk["run_var"], train
                )
            elif spec.norm != "none":
                x, c_norm = layers.groupnorm(x, blk["gamma"], blk["beta"], self._norm_groups())
            else:
                c_norm = None
            x, c_act = layers.activation(x, spec.activation)
            pre_pool = x
            x, c_pool = layers.pool(x, spec.pooling)
            feats.append(pre_pool if tap == "pre_pool" else x)
            caches.append((c_conv, c_norm, c_act, c_pool))
        embedding = x.reshape(x.shape[0], -1)
        logits, c_fc = layers.linear(embedding, self.fc_w, self.fc_b)
        stack = FeatureStack(per_layer=feats, final_embedding=embedding, logits=logits)
        if need_caches:
            return stack, {"blocks": caches, "fc": c_fc, "last_shape": x.shape, "tap": tap}
        return stack

    def backward(
        self,
        caches,
        d_per_layer=None,
        d_embed=None,
        d_logits=None,
        need_param_grads=False,
    ):
        """Propagate injected gradients back to the input batch.

        d_per_layer: per-block gradients at the tap point (entries may be
        None); d_embed: gradient on the flattened embedding; d_logits:
        gradient on classifier logits. Returns dx, or (dx, grads) with
        grads keyed like parameters().
        """
        spec = self.spec
        tap = caches["tap"]
        if d_per_layer is not None and len(d_per_layer) != spec.depth:
            raise ContractError(
                f"expected {spec.depth} per-layer gradients, got {len(d_per_layer)}"
            )
        grads = {} if need_param_grads else None
        dflat = None
        if d_logits is not None:
            dfc_x, dfc_w, dfc_b = layers.linear_backward(
                d_logits, caches["fc"], need_param_grads
            )
            if need_param_grads:
                grads["fc_w"] = dfc_w
                grads["fc_b"] = dfc_b
            dflat = dfc_x
        elif need_param_grads:
            grads["fc_w"] = np.zeros_like(self.fc_w)
            grads["fc_b"] = np.zeros_like(self.fc_b)
        if d_embed is not None:
            dflat = d_embed if dflat is None else dflat + d_embed
        if dflat is not None:
            dx = dflat.reshape(caches["last_shape"]).astype(self.dtype, copy=False)
        else:
            dx = np.zeros(caches["last_shape"], dtype=self.dtype)
        for i in reversed(range(spec.depth)):
            c_conv, c_norm, c_act, c_pool = caches["blocks"][i]
            dtap = d_per_layer[i] if d_per_layer is not None else None
            if dtap is not None and tap == "post_pool":
                dx = dx + dtap
            dx = layers.pool_backward(dx, c_pool)
            if dtap is not None and tap == "pre_pool":
                dx = dx + dtap
            dx = layers.activation_backward(dx, c_act)
            if spec.norm == "batch":
                dx, dgamma, dbeta = layers.batchnorm_backward(dx, c_norm, need_param_grads)
            elif spec.norm != "none":
                dx, dgamma, dbeta = layers.groupnorm_backward(dx, c_norm, need_param_grads)
            else:
                dgamma = dbeta = None
            dx, dw, db = layers.conv3x3_backward(dx, c_conv, need_param_grads)
            if need_param_grads:
                grads[f"block{i}.w"] = dw
                grads[f"block{i}.b"] = db
                if dgamma is not None:
                    grads[f"block{i}.gamma"] = dgamma
                    grads[f"block{i}.beta"] = dbeta
        if need_param_grads:
            return dx, grads
        return dx


def build_network(spec, seed, dtype=np.float32):
    return Network(spec, seed, dtype=dtype)


def init_weights(network, seed):
    return network.init_weights(seed)


def forward_features(network, batch, tap="post_pool"):
    return network.forward(batch, tap=tap)

"""The distillation loop.

Each iteration draws a fresh randomly initialized network (one Monte
Carlo sample of the weight distribution), pairs a real mini-batch with
the class's synthetic images, pushes both through the same augmentation
draw and network, and updates the synthetic pixels by SGD with momentum
on the attention-matching loss plus the weighted embedding-MMD term.
Network weights are never trained.

Everything is driven by named RNG streams spawned from the config seed,
and those streams are checkpointed, so a resumed run is bit-identical to
an uninterrupted one.
"""

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .augment import AugmentConfig, apply_aug, apply_aug_fwd, apply_aug_vjp, sample_aug
from .data import ClassBatchSampler, SyntheticDataset, init_synthetic
from .errors import ConfigMismatchError, ContractError, DivergenceError, ParameterError
from .losses import MATCH_MODES, attention_matching_loss, mmd_term, total_loss
from .nets import ConvNetSpec, Network

ENGINE_VERSION = 1


@dataclass
class DistillConfig:
    ipc: int = 1
    iterations: int = 8000
    lr_images: float | None = None  # default 1.0 for ipc <= 50, else 10.0
    image_momentum: float = 0.5
    weight_decay_images: float = 0.0
    lam: float = 0.01  # task balance on the MMD term
    p_s: float = 4.0
    p_c: float = 4.0
    batch_real: int = 128
    mode: str = "both"
    seed: int = 0
    tap_point: str = "post_pool"
    channel_weight: float = 1.0
    normalize_eps: float = 1e-8
    syn_batch_cap: int = 0  # 0: the whole class is the synthetic batch
    depth: int = 3
    width: int = 128
    activation: str = "relu"
    norm: str = "instance"
    pooling: str = "avg"
    augment: bool = True
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    dtype: str = "float32"
    checkpoint_every: int = 0
    abort_loss: float = 1e6

    def validate(self):
        if self.ipc < 1:
            raise ParameterError("ipc must be >= 1")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.mode not in MATCH_MODES:
            raise ParameterError(f"mode must be one of {MATCH_MODES}")
        if self.lam < 0:
            raise ParameterError("task balance must be >= 0")
        if self.p_s < 1 or self.p_c < 1:
            raise ParameterError("attention powers must be >= 1")
        if not 0 <= self.image_momentum < 1:
            raise ParameterError("image momentum must be in [0, 1)")
        if self.batch_real < 1:
            raise ParameterError("batch_real must be >= 1")
        if self.lr_images is not None and self.lr_images < 0:
            raise ParameterError("lr_images must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ParameterError("dtype must be float32 or float64")
        return self

    def resolved_lr(self):
        if self.lr_images is not None:
            return self.lr_images
        return 1.0 if self.ipc <= 50 else 10.0

    def net_spec(self, in_shape, num_classes):
        return ConvNetSpec(
            depth=self.depth,
            width=self.width,
            activation=self.activation,
            norm=self.norm,
            pooling=self.pooling,
            in_shape=tuple(in_shape),
            num_classes=num_classes,
        )

    def to_dict(self):
        return asdict(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class DistillState:
    synthetic: SyntheticDataset
    momentum: np.ndarray
    iteration: int
    rng_network: np.random.Generator
    rng_aug: np.random.Generator
    rng_syn: np.random.Generator
    sampler: ClassBatchSampler
    metrics: list = field(default_factory=list)


def init_state(config, real):
    config.validate()
    s_init, s_net, s_batch, s_aug, s_syn = np.random.SeedSequence(config.seed).spawn(5)
    syn = init_synthetic(real, config.ipc, s_init)
    syn.images = syn.images.astype(config.dtype)
    return DistillState(
        synthetic=syn,
        momentum=np.zeros_like(syn.images),
        iteration=0,
        rng_network=np.random.default_rng(s_net),
        rng_aug=np.random.default_rng(s_aug),
        rng_syn=np.random.default_rng(s_syn),
        sampler=ClassBatchSampler(real, s_batch),
    )


def step(state, config, real):
    """One full iteration; mutates state in place and returns
    (LossBreakdown, step_ms)."""
    t0 = time.perf_counter()
    dtype = np.dtype(config.dtype)
    k_classes = real.num_classes
    spec = config.net_spec(real.image_shape, k_classes)
    net_seed = int(state.rng_network.integers(0, 2**63 - 1))
    net = Network(spec, net_seed, dtype=dtype)

    syn = state.synthetic
    grad = np.zeros_like(syn.images)
    attn_sum = 0.0
    mmd_sum = 0.0
    per_layer_sum = np.zeros(spec.depth)
    for k in range(k_classes):
        idx = syn.class_slice(k)
        if config.syn_batch_cap and len(idx) > config.syn_batch_cap:
            idx = state.rng_syn.choice(idx, size=config.syn_batch_cap, replace=False)
            idx.sort()
        xr = state.sampler.sample(k, config.batch_real).astype(dtype, copy=False)
        xs = syn.images[idx]
        aug_cache = None
        if config.augment:
            bs = max(len(xr), len(xs)) if config.aug.per_image else None
            params = sample_aug(state.rng_aug, config.aug, batch_size=bs)
            xr = apply_aug(xr, params)
            xs, aug_cache = apply_aug_fwd(xs, params)
        stack_r = net.forward(xr, train=True, tap=config.tap_point)
        stack_s, caches = net.forward(
            xs, train=True, need_caches=True, tap=config.tap_point
        )
        attn_k, per_layer_k, d_layers = attention_matching_loss(
            stack_r,
            stack_s,
            config.p_s,
            config.p_c,
            config.mode,
            eps=config.normalize_eps,
            channel_weight=config.channel_weight,
            want_grads=True,
        )
        mmd_k, d_embed = mmd_term(stack_r.final_embedding, stack_s.final_embedding)
        d_embed = (d_embed * config.lam).astype(dtype) if config.lam != 0 else None
        dx = net.backward(caches, d_per_layer=d_layers, d_embed=d_embed)
        if aug_cache is not None:
            dx = apply_aug_vjp(dx, aug_cache)
        grad[idx] = dx
        attn_sum += attn_k
        mmd_sum += mmd_k
        per_layer_sum += per_layer_k

    breakdown = total_loss(attn_sum, mmd_sum, config.lam, per_layer_sum.tolist())
    if not np.isfinite(breakdown.total) or abs(breakdown.total) > config.abort_loss:
        raise DivergenceError(
            f"loss {breakdown.total} at iteration {state.iteration} "
            f"(abort threshold {config.abort_loss})"
        )
    if config.weight_decay_images:
        grad += dtype.type(config.weight_decay_images) * syn.images
    v = state.momentum
    v *= dtype.type(config.image_momentum)
    v += grad
    syn.images -= dtype.type(config.resolved_lr()) * v
    state.iteration += 1
    step_ms = (time.perf_counter() - t0) * 1000.0
    state.metrics.append((state.iteration, breakdown, step_ms))
    return breakdown, step_ms


def write_checkpoint(state, config, path):
    meta = {
        "engine_version": ENGINE_VERSION,
        "config_hash": config.hash(),
        "iteration": state.iteration,
        "ipc": state.synthetic.ipc,
        "origin": state.synthetic.origin,
        "rng": {
            "network": state.rng_network.bit_generator.state,
            "aug": state.rng_aug.bit_generator.state,
            "syn": state.rng_syn.bit_generator.state,
        },
        "sampler": state.sampler.get_state(),
    }
    container.save_checkpoint(
        path,
        meta,
        state.synthetic.images,
        state.momentum,
        state.synthetic.labels,
        state.synthetic.preprocess,
    )


def resume_checkpoint(path, config, real):
    """Rebuild a DistillState; refuses checkpoints from other configs."""
    meta, images, momentum, labels, prep = container.load_checkpoint(path)
    if meta.get("config_hash") != config.hash():
        raise ConfigMismatchError(
            f"checkpoint {path} was written under a different config "
            f"({meta.get('config_hash', '?')[:12]} != {config.hash()[:12]})"
        )
    if prep is not None and real.preprocess is not None and not prep.matches(real.preprocess):
        raise ContractError("checkpoint preprocessing does not match the dataset")
    syn = SyntheticDataset(
        images=images, labels=labels, ipc=meta["ipc"],
        preprocess=prep, origin=meta.get("origin", "init"),
    )
    state = DistillState(
        synthetic=syn,
        momentum=momentum,
        iteration=meta["iteration"],
        rng_network=np.random.default_rng(),
        rng_aug=np.random.default_rng(),
        rng_syn=np.random.default_rng(),
        sampler=ClassBatchSampler(real, 0),
    )
    state.rng_network.bit_generator.state = meta["rng"]["network"]
    state.rng_aug.bit_generator.state = meta["rng"]["aug"]
    state.rng_syn.bit_generator.state = meta["rng"]["syn"]
    state.sampler.set_state(meta["sampler"])
    return state


def distill(config, real, state=None, on_step=None, checkpoint_dir=None):
    """Run Algorithm-1 style distillation to config.iterations.

    Returns (SyntheticDataset, metrics) where metrics is the list of
    (iteration, LossBreakdown, step_ms) tuples. With iterations=0 the
    initialization is returned unchanged.
    """
    config.validate()
    if state is None:
        state = init_state(config, real)
    while state.iteration < config.iterations:
        try:
            breakdown, step_ms = step(state, config, real)
        except DivergenceError as e:
            if checkpoint_dir is not None:
                snap = os.path.join(checkpoint_dir, "diverged.ckpt")
                write_checkpoint(state, config, snap)
                raise DivergenceError(f"{e} [state dumped to {snap}]") from e
            raise
        if on_step is not None:
            on_step(state, breakdown, step_ms)
        if (
            config.checkpoint_every
            and checkpoint_dir is not None
            and state.iteration % config.checkpoint_every == 0
        ):
            write_checkpoint(
                state,
                config,
                os.path.join(checkpoint_dir, f"ck_{state.iteration:06d}.ckpt"),
            )
    final = state.synthetic.copy()
    final.origin = "distilled"
    return final, state.metrics

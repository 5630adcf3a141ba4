"""INI run-configuration parsing.

Sections mirror the hyperparameter categories: [data], [optimization],
[loss], [augment] (the DSA knobs), [encoder] (network architecture),
[evaluation], and [nas]. Every key is validated by name so config errors
identify exactly what to fix.
"""

import configparser
import os
from dataclasses import dataclass, field

from .augment import DEFAULT_OPS, AugmentConfig
from .engine import DistillConfig
from .errors import ConfigError
from .evaluate import EvalProtocol


@dataclass
class RunSettings:
    dataset: str
    root: str | None
    preprocess: str
    zca_eps: float
    distill: DistillConfig
    eval_proto: EvalProtocol
    nas: dict = field(default_factory=dict)

    def to_dict(self):
        from dataclasses import asdict

        return {
            "dataset": self.dataset,
            "root": self.root,
            "preprocess": self.preprocess,
            "zca_eps": self.zca_eps,
            "distill": asdict(self.distill),
            "evaluation": asdict(self.eval_proto),
            "nas": dict(self.nas),
        }


def _get(parser, section, key, conv, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"[{section}] missing required key '{key}'")
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{section}] key '{key}': cannot parse {raw!r} ({e})") from e


def _bool(raw):
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _ops_list(raw):
    ops = tuple(tok.strip() for tok in raw.split(",") if tok.strip())
    bad = [op for op in ops if op not in DEFAULT_OPS]
    if bad:
        raise ValueError(f"unknown ops {bad}; choose from {list(DEFAULT_OPS)}")
    return ops


_KNOWN_KEYS = {
    "data": {"dataset", "root", "preprocess", "zca_eps"},
    "optimization": {
        "ipc", "iterations", "lr_images", "image_momentum", "weight_decay_images",
        "batch_real", "seed", "checkpoint_every", "syn_batch_cap", "dtype",
    },
    "loss": {
        "task_balance", "p_spatial", "p_channel", "mode", "normalize_eps",
        "channel_weight",
    },
    "augment": {
        "enable", "ops", "per_image", "brightness", "saturation", "contrast",
        "crop_pad", "cutout_ratio", "flip_prob", "scale_ratio", "rotate_deg",
    },
    "encoder": {"depth", "width", "activation", "norm", "pooling", "tap_point"},
    "evaluation": {
        "n_models", "epochs", "lr_network", "net_momentum", "weight_decay_network",
        "sched_decay", "sched_step", "batch_cap", "augment", "seed",
    },
    "nas": {"grid", "n_models", "epochs", "reference"},
}


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"[{section}] unknown key '{key}'")

    dataset = _get(parser, "data", "dataset", str, required=True)
    root = _get(parser, "data", "root", str)
    preprocess = _get(parser, "data", "preprocess", str, default="auto")
    zca_eps = _get(parser, "data", "zca_eps", float, default=0.1)
    if preprocess not in ("auto", "zca", "mean-std"):
        raise ConfigError(f"[data] key 'preprocess': unknown mode {preprocess!r}")

    aug = AugmentConfig(
        enabled=_get(parser, "augment", "ops", _ops_list, default=DEFAULT_OPS),
        per_image=_get(parser, "augment", "per_image", _bool, default=False),
        brightness=_get(parser, "augment", "brightness", float, default=1.0),
        saturation=_get(parser, "augment", "saturation", float, default=2.0),
        contrast=_get(parser, "augment", "contrast", float, default=0.5),
        crop_pad=_get(parser, "augment", "crop_pad", float, default=0.125),
        cutout_ratio=_get(parser, "augment", "cutout_ratio", float, default=0.5),
        flip_prob=_get(parser, "augment", "flip_prob", float, default=0.5),
        scale_ratio=_get(parser, "augment", "scale_ratio", float, default=1.2),
        rotate_deg=_get(parser, "augment", "rotate_deg", float, default=15.0),
    )

    distill = DistillConfig(
        ipc=_get(parser, "optimization", "ipc", int, required=True),
        iterations=_get(parser, "optimization", "iterations", int, default=8000),
        lr_images=_get(parser, "optimization", "lr_images", float),
        image_momentum=_get(parser, "optimization", "image_momentum", float, default=0.5),
        weight_decay_images=_get(
            parser, "optimization", "weight_decay_images", float, default=0.0
        ),
        batch_real=_get(parser, "optimization", "batch_real", int, default=128),
        seed=_get(parser, "optimization", "seed", int, default=0),
        checkpoint_every=_get(parser, "optimization", "checkpoint_every", int, default=0),
        syn_batch_cap=_get(parser, "optimization", "syn_batch_cap", int, default=0),
        dtype=_get(parser, "optimization", "dtype", str, default="float32"),
        lam=_get(parser, "loss", "task_balance", float, default=0.01),
        p_s=_get(parser, "loss", "p_spatial", float, default=4.0),
        p_c=_get(parser, "loss", "p_channel", float, default=4.0),
        mode=_get(parser, "loss", "mode", str, default="both"),
        normalize_eps=_get(parser, "loss", "normalize_eps", float, default=1e-8),
        channel_weight=_get(parser, "loss", "channel_weight", float, default=1.0),
        depth=_get(parser, "encoder", "depth", int, default=3),
        width=_get(parser, "encoder", "width", int, default=128),
        activation=_get(parser, "encoder", "activation", str, default="relu"),
        norm=_get(parser, "encoder", "norm", str, default="instance"),
        pooling=_get(parser, "encoder", "pooling", str, default="avg"),
        tap_point=_get(parser, "encoder", "tap_point", str, default="post_pool"),
        augment=_get(parser, "augment", "enable", _bool, default=True),
        aug=aug,
    )

    eval_proto = EvalProtocol(
        n_models=_get(parser, "evaluation", "n_models", int, default=20),
        epochs=_get(parser, "evaluation", "epochs", int, default=300),
        lr_net=_get(parser, "evaluation", "lr_network", float, default=0.01),
        net_momentum=_get(parser, "evaluation", "net_momentum", float, default=0.9),
        weight_decay=_get(
            parser, "evaluation", "weight_decay_network", float, default=5e-4
        ),
        sched_decay=_get(parser, "evaluation", "sched_decay", float, default=0.5),
        sched_step=_get(parser, "evaluation", "sched_step", int, default=15),
        batch_cap=_get(parser, "evaluation", "batch_cap", int, default=256),
        augment=_get(parser, "evaluation", "augment", _bool, default=True),
        seed=_get(parser, "evaluation", "seed", int, default=0),
        depth=_get(parser, "encoder", "depth", int, default=3),
        width=_get(parser, "encoder", "width", int, default=128),
        activation=_get(parser, "encoder", "activation", str, default="relu"),
        norm=_get(parser, "encoder", "norm", str, default="instance"),
        pooling=_get(parser, "encoder", "pooling", str, default="avg"),
        aug=aug,
        dtype=_get(parser, "optimization", "dtype", str, default="float32"),
    )

    nas = {
        "grid": _get(parser, "nas", "grid", str, default="desk"),
        "n_models": _get(parser, "nas", "n_models", int, default=1),
        "epochs": _get(parser, "nas", "epochs", int, default=0),  # 0: use evaluation epochs
        "reference": _get(parser, "nas", "reference", str, default="train-real"),
    }
    if nas["grid"] not in ("desk", "full"):
        raise ConfigError(f"[nas] key 'grid': expected desk|full, got {nas['grid']!r}")

    try:
        distill.validate()
        eval_proto.validate()
    except Exception as e:
        raise ConfigError(str(e)) from e
    return RunSettings(
        dataset=dataset,
        root=root,
        preprocess=preprocess,
        zca_eps=zca_eps,
        distill=distill,
        eval_proto=eval_proto,
        nas=nas,
    )
